#include "migc/config.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace migc {

void SampleConfig::validate() const {
  if (steps < 1) throw ConfigError("sample.steps must be positive");
  if (migc_steps < 0 || migc_steps > steps)
    throw ConfigError("sample.migc_steps must lie in [0, steps]");
  if (cfg_scale < 0) throw ConfigError("sample.cfg_scale must be non-negative");
}

void RunConfig::validate() const {
  model.validate();
  if (T < 1 || beta0 <= 0 || beta1 < beta0 || beta1 >= 1)
    throw ConfigError("model schedule constants out of range");
  sample.validate();
  if (sample.steps > T) throw ConfigError("sample.steps cannot exceed model.T");
  bench.validate();
  eval.validate();
  StageConfig s = backbone_stage();
  s.validate();
  if (train.migc_epochs < 1) throw ConfigError("train.migc_epochs must be positive");
  if (train.n_hi > model.max_num)
    throw ConfigError("train.n_hi exceeds the aggregation slot capacity max_num");
}

StageConfig RunConfig::backbone_stage() const {
  StageConfig s;
  s.n_images = train.n_images;
  s.epochs = train.backbone_epochs;
  s.batch = train.batch;
  s.lr = train.lr;
  s.seed = train.seed;
  s.prompt_dropout = train.prompt_dropout;
  s.lambda = 0.0;
  s.n_lo = train.n_lo;
  s.n_hi = train.n_hi;
  return s;
}

StageConfig RunConfig::migc_stage() const {
  StageConfig s = backbone_stage();
  s.epochs = train.migc_epochs;
  s.prompt_dropout = 0.0;
  s.lambda = train.lambda;
  return s;
}

// ---------------------------------------------------------------------------
// schema-driven text format
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("cannot format a double");
  return std::string(buf, p);
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(where + ": '" + s + "' is not a number");
  return v;
}

int64_t parse_i64(const std::string& s, const std::string& where) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(where + ": '" + s + "' is not an integer");
  return v;
}

std::string fmt_interval(double lo, double hi) { return fmt_double(lo) + ":" + fmt_double(hi); }

std::pair<double, double> parse_interval(const std::string& s, const std::string& where) {
  const size_t c = s.find(':');
  if (c == std::string::npos) throw ConfigError(where + ": expected 'lo:hi', got '" + s + "'");
  return {parse_double(s.substr(0, c), where), parse_double(s.substr(c + 1), where)};
}

std::string fmt_hue(const std::vector<std::pair<double, double>>& hue) {
  std::string s;
  for (size_t i = 0; i < hue.size(); ++i) {
    if (i) s += ",";
    s += fmt_interval(hue[i].first, hue[i].second);
  }
  return s.empty() ? "any" : s;
}

std::vector<std::pair<double, double>> parse_hue(const std::string& s,
                                                 const std::string& where) {
  std::vector<std::pair<double, double>> out;
  if (s == "any") return out;  // hue unconstrained (white / black)
  size_t pos = 0;
  while (pos <= s.size()) {
    const size_t c = s.find(',', pos);
    const std::string part = s.substr(pos, c == std::string::npos ? std::string::npos : c - pos);
    out.push_back(parse_interval(part, where));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  if (out.empty()) throw ConfigError(where + ": empty hue list");
  return out;
}

struct Field {
  std::string section, key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

std::vector<Field> schema() {
  std::vector<Field> fs;
  auto num = [&fs](const std::string& sec, const std::string& key,
                   std::function<int&(RunConfig&)> ref) {
    fs.push_back({sec, key,
                  [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
                  [ref](RunConfig& c, const std::string& v, const std::string& w) {
                    ref(c) = static_cast<int>(parse_i64(v, w));
                  }});
  };
  auto dbl = [&fs](const std::string& sec, const std::string& key,
                   std::function<double&(RunConfig&)> ref) {
    fs.push_back({sec, key,
                  [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); },
                  [ref](RunConfig& c, const std::string& v, const std::string& w) {
                    ref(c) = parse_double(v, w);
                  }});
  };
  auto u64 = [&fs](const std::string& sec, const std::string& key,
                   std::function<uint64_t&(RunConfig&)> ref) {
    fs.push_back({sec, key,
                  [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
                  [ref](RunConfig& c, const std::string& v, const std::string& w) {
                    const int64_t x = parse_i64(v, w);
                    if (x < 0) throw ConfigError(w + ": must be non-negative");
                    ref(c) = static_cast<uint64_t>(x);
                  }});
  };

  num("model", "res", [](RunConfig& c) -> int& { return c.model.res; });
  num("model", "base", [](RunConfig& c) -> int& { return c.model.base; });
  num("model", "mid", [](RunConfig& c) -> int& { return c.model.mid; });
  num("model", "deep", [](RunConfig& c) -> int& { return c.model.deep; });
  num("model", "heads", [](RunConfig& c) -> int& { return c.model.heads; });
  num("model", "d_txt", [](RunConfig& c) -> int& { return c.model.d_txt; });
  num("model", "t_dim", [](RunConfig& c) -> int& { return c.model.t_dim; });
  num("model", "gn_groups", [](RunConfig& c) -> int& { return c.model.gn_groups; });
  num("model", "max_num", [](RunConfig& c) -> int& { return c.model.max_num; });
  num("model", "sac_hidden", [](RunConfig& c) -> int& { return c.model.sac_hidden; });
  num("model", "spatial_k", [](RunConfig& c) -> int& { return c.model.spatial_k; });
  num("model", "T", [](RunConfig& c) -> int& { return c.T; });
  dbl("model", "beta0", [](RunConfig& c) -> double& { return c.beta0; });
  dbl("model", "beta1", [](RunConfig& c) -> double& { return c.beta1; });

  num("sample", "steps", [](RunConfig& c) -> int& { return c.sample.steps; });
  num("sample", "migc_steps", [](RunConfig& c) -> int& { return c.sample.migc_steps; });
  dbl("sample", "cfg_scale", [](RunConfig& c) -> double& { return c.sample.cfg_scale; });

  num("train", "n_images", [](RunConfig& c) -> int& { return c.train.n_images; });
  num("train", "backbone_epochs", [](RunConfig& c) -> int& { return c.train.backbone_epochs; });
  num("train", "migc_epochs", [](RunConfig& c) -> int& { return c.train.migc_epochs; });
  num("train", "batch", [](RunConfig& c) -> int& { return c.train.batch; });
  dbl("train", "lr", [](RunConfig& c) -> double& { return c.train.lr; });
  u64("train", "seed", [](RunConfig& c) -> uint64_t& { return c.train.seed; });
  dbl("train", "prompt_dropout", [](RunConfig& c) -> double& { return c.train.prompt_dropout; });
  dbl("train", "lambda", [](RunConfig& c) -> double& { return c.train.lambda; });
  num("train", "n_lo", [](RunConfig& c) -> int& { return c.train.n_lo; });
  num("train", "n_hi", [](RunConfig& c) -> int& { return c.train.n_hi; });

  num("bench", "level_lo", [](RunConfig& c) -> int& { return c.bench.level_lo; });
  num("bench", "level_hi", [](RunConfig& c) -> int& { return c.bench.level_hi; });
  num("bench", "layouts_per_level",
      [](RunConfig& c) -> int& { return c.bench.layouts_per_level; });
  num("bench", "seeds_per_layout", [](RunConfig& c) -> int& { return c.bench.seeds_per_layout; });
  num("bench", "grid", [](RunConfig& c) -> int& { return c.bench.grid; });
  dbl("bench", "min_side_frac", [](RunConfig& c) -> double& { return c.bench.min_side_frac; });
  num("bench", "max_side_units", [](RunConfig& c) -> int& { return c.bench.max_side_units; });
  dbl("bench", "max_pair_iou", [](RunConfig& c) -> double& { return c.bench.max_pair_iou; });
  num("bench", "max_attempts", [](RunConfig& c) -> int& { return c.bench.max_attempts; });
  u64("bench", "seed", [](RunConfig& c) -> uint64_t& { return c.bench_seed; });

  dbl("eval", "iou_threshold", [](RunConfig& c) -> double& { return c.eval.iou_threshold; });
  dbl("eval", "color_threshold", [](RunConfig& c) -> double& { return c.eval.color_threshold; });
  dbl("eval", "a_min_frac", [](RunConfig& c) -> double& { return c.eval.a_min_frac; });
  dbl("eval", "cross_hi", [](RunConfig& c) -> double& { return c.eval.bands.cross_hi; });
  dbl("eval", "triangle_hi", [](RunConfig& c) -> double& { return c.eval.bands.triangle_hi; });
  dbl("eval", "circle_hi", [](RunConfig& c) -> double& { return c.eval.bands.circle_hi; });
  fs.push_back({"eval", "tie_rule",
                [](const RunConfig& c) {
                  return c.eval.tie_rule == TieRule::kMaxIou ? std::string("max_iou")
                                                             : std::string("closest");
                },
                [](RunConfig& c, const std::string& v, const std::string& w) {
                  if (v == "max_iou")
                    c.eval.tie_rule = TieRule::kMaxIou;
                  else if (v == "closest")
                    c.eval.tie_rule = TieRule::kClosest;
                  else
                    throw ConfigError(w + ": expected max_iou or closest, got '" + v + "'");
                }});

  // the segmentation ranges travel with the config so metrics stay
  // attributable to the exact color definitions that produced them
  const Vocab vocab = Vocab::standard();  // named: colors() refers into it
  for (const std::string& color : vocab.colors()) {
    auto ref = [color](RunConfig& c) -> ColorRange& {
      for (auto& [name, r] : c.eval.colors.entries)
        if (name == color) return r;
      throw ConfigError("color '" + color + "' missing from the range table");
    };
    fs.push_back({"eval", color + "_hue",
                  [ref](const RunConfig& c) { return fmt_hue(ref(const_cast<RunConfig&>(c)).hue); },
                  [ref](RunConfig& c, const std::string& v, const std::string& w) {
                    ref(c).hue = parse_hue(v, w);
                  }});
    fs.push_back({"eval", color + "_s",
                  [ref](const RunConfig& c) {
                    const ColorRange& r = ref(const_cast<RunConfig&>(c));
                    return fmt_interval(r.s_lo, r.s_hi);
                  },
                  [ref](RunConfig& c, const std::string& v, const std::string& w) {
                    std::tie(ref(c).s_lo, ref(c).s_hi) = parse_interval(v, w);
                  }});
    fs.push_back({"eval", color + "_v",
                  [ref](const RunConfig& c) {
                    const ColorRange& r = ref(const_cast<RunConfig&>(c));
                    return fmt_interval(r.v_lo, r.v_hi);
                  },
                  [ref](RunConfig& c, const std::string& v, const std::string& w) {
                    std::tie(ref(c).v_lo, ref(c).v_hi) = parse_interval(v, w);
                  }});
  }
  return fs;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  const std::vector<Field> fs = schema();
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = "config line " + std::to_string(line_no);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header '" + t + "'");
      section = t.substr(1, t.size() - 2);
      bool known = false;
      for (const auto& f : fs) known = known || f.section == section;
      if (!known) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' before any section");
    const Field* field = nullptr;
    for (const auto& f : fs)
      if (f.section == section && f.key == key) {
        field = &f;
        break;
      }
    if (!field)
      throw ConfigError(where + ": unknown key '" + key + "' in section [" + section + "]");
    field->set(cfg, value, where + " (" + section + "." + key + ")");
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  const std::vector<Field> fs = schema();
  std::ostringstream os;
  std::string section;
  for (const auto& f : fs) {
    if (f.section != section) {
      if (!section.empty()) os << "\n";
      section = f.section;
      os << "[" << section << "]\n";
    }
    os << f.key << " = " << f.get(cfg) << "\n";
  }
  return os.str();
}

}  // namespace migc
