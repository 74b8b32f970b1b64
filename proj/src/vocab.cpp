#include "migc/vocab.hpp"

#include <algorithm>

namespace migc {

Vocab Vocab::standard() {
  return Vocab({"red", "yellow", "green", "blue", "white", "black", "brown",  //
                "circle", "square", "triangle", "cross",                      //
                "<null>"});
}

int Vocab::id(const std::string& w) const {
  auto it = std::find(words_.begin(), words_.end(), w);
  if (it == words_.end()) throw ConfigError("vocab: unknown word '" + w + "'");
  return static_cast<int>(it - words_.begin());
}

bool Vocab::is_color(const std::string& w) const {
  return std::find(colors_.begin(), colors_.end(), w) != colors_.end();
}

bool Vocab::is_shape(const std::string& w) const {
  return std::find(shapes_.begin(), shapes_.end(), w) != shapes_.end();
}

std::vector<int> encode_phrase(const Vocab& v, const Phrase& p) {
  if (p.attr.empty() && p.obj.empty()) return {v.null_id(), v.null_id()};
  if (!v.is_color(p.attr)) throw ConfigError("phrase: unknown attribute '" + p.attr + "'");
  if (!v.is_shape(p.obj)) throw ConfigError("phrase: unknown object '" + p.obj + "'");
  return {v.id(p.attr), v.id(p.obj)};
}

std::vector<int> encode_prompt(const Vocab& v, const std::vector<Phrase>& items) {
  if (items.empty()) return {v.null_id(), v.null_id()};
  std::vector<int> out;
  for (const Phrase& p : items) {
    auto t = encode_phrase(v, p);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::string build_prompt(const std::vector<Phrase>& items) {
  std::string s;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i > 0) s += ", ";
    if (i + 1 == items.size() && items.size() > 1) s += "and ";
    s += "a " + items[i].attr + " " + items[i].obj;
  }
  return s;
}

}  // namespace migc
