#pragma once

#include <string>
#include <utility>
#include <vector>

#include "migc/tensor.hpp"

namespace migc {

// One instance description: an attribute (color) plus an object (shape).
struct Phrase {
  std::string attr;
  std::string obj;
};

// Closed-world token table. Order is part of the format: colors, shapes, null.
class Vocab {
 public:
  static Vocab standard();
  explicit Vocab(std::vector<std::string> words) : words_(std::move(words)) {}

  int id(const std::string& w) const;  // ConfigError on unknown word
  const std::string& word(int id) const { return words_.at(static_cast<size_t>(id)); }
  int size() const { return static_cast<int>(words_.size()); }
  int null_id() const { return size() - 1; }
  const std::vector<std::string>& words() const { return words_; }

  bool is_color(const std::string& w) const;
  bool is_shape(const std::string& w) const;
  const std::vector<std::string>& colors() const { return colors_; }
  const std::vector<std::string>& shapes() const { return shapes_; }

 private:
  std::vector<std::string> words_;
  std::vector<std::string> colors_ = {"red", "yellow", "green", "blue", "white", "black", "brown"};
  std::vector<std::string> shapes_ = {"circle", "square", "triangle", "cross"};
};

// Exactly two tokens per phrase: [attr, obj]. The null phrase (both parts
// empty) encodes to [null, null].
std::vector<int> encode_phrase(const Vocab& v, const Phrase& p);

// Token stream for the whole prompt: phrase tokens in instance order; an
// empty list encodes to [null, null] (the unconditional prompt).
std::vector<int> encode_prompt(const Vocab& v, const std::vector<Phrase>& items);

// Fixed prompt wording: "a <attr1> <obj1>, a <attr2> <obj2>, and a <attrN> <objN>".
std::string build_prompt(const std::vector<Phrase>& items);

}  // namespace migc
