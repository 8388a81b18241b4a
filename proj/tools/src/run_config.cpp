#include "jemcal/cli/run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "jemcal/numfmt.hpp"

namespace jemcal::cli {

ConfigError::ConfigError(const std::string& field, const std::string& what, int line)
    : Error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + field + ": " + what),
      field_(field),
      line_(line) {}

std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::gaussian_mixture: return "gaussian_mixture";
    case DataSource::two_moons: return "two_moons";
    case DataSource::spirals: return "spirals";
    case DataSource::csv: return "csv";
  }
  return "unknown";
}

namespace {

int line_of(const YAML::Node& n) {
  const YAML::Mark m = n.Mark();
  return m.line >= 0 ? m.line + 1 : 0;
}

class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected a mapping", line_of(node_));
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::optional<YAML::Node> find(const std::string& key) {
    known_.insert(key);
    if (!node_ || !node_.IsMap()) return std::nullopt;
    const YAML::Node& map = node_;
    YAML::Node value = map[key];
    if (!value.IsDefined()) return std::nullopt;
    return value;
  }

  Section sub(const std::string& key) {
    auto n = find(key);
    return Section(n ? *n : YAML::Node(YAML::NodeType::Null), field(key));
  }

  void read(const std::string& key, double& out) {
    if (auto n = find(key)) out = as_double(*n, field(key));
  }

  template <class Int>
  void read_int(const std::string& key, Int& out, bool allow_negative = false) {
    if (auto n = find(key)) out = as_int<Int>(*n, field(key), allow_negative);
  }

  void read(const std::string& key, bool& out) {
    if (auto n = find(key)) {
      const std::string s = scalar(*n, field(key));
      if (s == "true") out = true;
      else if (s == "false") out = false;
      else throw ConfigError(field(key), "expected true or false, found '" + s + "'", line_of(*n));
    }
  }

  void read(const std::string& key, std::string& out) {
    if (auto n = find(key)) out = n->IsNull() ? std::string() : scalar(*n, field(key));
  }

  template <class F>
  void read_with(const std::string& key, F parse) {
    if (auto n = find(key)) {
      const std::string s = scalar(*n, field(key));
      try {
        parse(s);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(field(key), e.what(), line_of(*n));
      }
    }
  }

  /// Call after every read so unknown keys are reported.
  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!known_.count(key)) throw ConfigError(field(key), "unknown key", line_of(kv.first));
    }
  }

  static std::string scalar(const YAML::Node& n, const std::string& field) {
    if (!n.IsScalar()) throw ConfigError(field, "expected a scalar value", line_of(n));
    return n.Scalar();
  }

  static double as_double(const YAML::Node& n, const std::string& field) {
    const std::string s = scalar(n, field);
    const auto v = parse_double(s);
    if (!v || !std::isfinite(*v)) throw ConfigError(field, "expected a finite number, found '" + s + "'", line_of(n));
    return *v;
  }

  template <class Int>
  static Int as_int(const YAML::Node& n, const std::string& field, bool allow_negative) {
    const std::string s = scalar(n, field);
    long long v = 0;
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || (!allow_negative && v < 0)) {
      throw ConfigError(field, std::string("expected a ") + (allow_negative ? "" : "non-negative ") +
                                   "integer, found '" + s + "'",
                        line_of(n));
    }
    return static_cast<Int>(v);
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> known_;
};

template <class Int>
std::vector<Int> read_int_list(Section& s, const std::string& key, std::vector<Int> fallback) {
  const auto found = s.find(key);
  if (!found) return fallback;
  const YAML::Node& n = *found;
  if (n.IsNull()) return {};
  if (!n.IsSequence()) throw ConfigError(s.field(key), "expected a list", line_of(n));
  std::vector<Int> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    out.push_back(Section::as_int<Int>(n[i], s.field(key) + "[" + std::to_string(i) + "]", false));
  }
  return out;
}

DataSource source_from_string(const std::string& s) {
  for (auto v : {DataSource::gaussian_mixture, DataSource::two_moons, DataSource::spirals, DataSource::csv}) {
    if (to_string(v) == s) return v;
  }
  throw ContractError("unknown data source '" + s + "' (expected gaussian_mixture, two_moons, spirals or csv)");
}

void read_data(Section s, DataConfig& d) {
  s.read_with("source", [&](const std::string& v) { d.source = source_from_string(v); });
  s.read_int("num_classes", d.num_classes);
  s.read_int("dim", d.dim);
  s.read_int("n_per_class", d.n_per_class);
  s.read("separation", d.separation);
  s.read_int("n", d.n);
  s.read("noise", d.noise);
  s.read("turns", d.turns);
  s.read("path", d.path);
  s.read_int("label_column", d.label_column, true);
  {
    Section f = s.sub("split");
    f.read("train", d.split.train);
    f.read("dev", d.split.dev);
    f.read("test", d.split.test);
    f.finish();
  }
  s.read_int("seed", d.seed);
  s.read("standardize", d.standardize);
  s.finish();
}

void read_model(Section s, ModelSpec& m) {
  m.hidden = read_int_list<std::size_t>(s, "hidden", m.hidden);
  s.read_with("activation", [&](const std::string& v) { m.activation = activation_from_string(v); });
  s.read("leaky_slope", m.leaky_slope);
  s.read("temperature", m.temperature);
  s.finish();
}

void read_sgld(Section s, SgldConfig& g) {
  s.read_int("steps", g.steps);
  s.read("step_size", g.step_size);
  s.read("noise_scale", g.noise_scale);
  s.read("reinit_prob", g.reinit_prob);
  if (const auto n = s.find("clip_grad")) {
    if (n->IsNull() || (n->IsScalar() && n->Scalar() == "none")) {
      g.clip_grad.reset();
    } else {
      g.clip_grad = Section::as_double(*n, s.field("clip_grad"));
    }
  }
  s.read("decouple_noise", g.decouple_noise);
  s.read("box_low", g.box.low);
  s.read("box_high", g.box.high);
  s.finish();
}

void read_train(Section s, TrainConfig& t) {
  s.read_with("mode", [&](const std::string& v) { t.mode = train_mode_from_string(v); });
  s.read_int("epochs", t.epochs);
  s.read_int("batch_size", t.batch_size);
  {
    Section lr = s.sub("lr");
    lr.read("base", t.lr.base);
    lr.read_int("warmup_steps", t.lr.warmup_steps);
    t.lr.decay_epochs = read_int_list<int>(lr, "decay_epochs", t.lr.decay_epochs);
    lr.read("decay_factor", t.lr.decay_factor);
    lr.finish();
  }
  s.read("momentum", t.momentum);
  s.read("gen_weight", t.gen_weight);
  s.read_int("buffer_capacity", t.buffer_capacity);
  s.read_int("eval_every", t.eval_every);
  s.read_int("divergence_budget", t.divergence_budget);
  s.finish();
}

void check(const std::string& field, bool ok, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

}  // namespace

void RunConfig::validate() const {
  const DataConfig& d = data;
  if (d.source == DataSource::csv) {
    check("data.path", !d.path.empty(), "a dataset path is required when data.source is csv");
    check("data.num_classes", d.num_classes >= 2, "must be at least 2");
  }
  if (d.source == DataSource::gaussian_mixture) {
    check("data.num_classes", d.num_classes >= 2, "must be at least 2");
    check("data.dim", d.dim >= 1, "must be at least 1");
    check("data.n_per_class", d.n_per_class >= 1, "must be at least 1");
    check("data.separation", d.separation >= 0.0, "must be >= 0");
  }
  if (d.source == DataSource::two_moons || d.source == DataSource::spirals) {
    check("data.n", d.n >= 2, "must be at least 2");
    check("data.noise", d.noise >= 0.0, "must be >= 0");
  }
  const double sum = d.split.train + d.split.dev + d.split.test;
  check("data.split", d.split.train > 0.0 && d.split.dev >= 0.0 && d.split.test > 0.0 && std::abs(sum - 1.0) < 1e-9,
        "fractions must be non-negative, with train and test > 0, and sum to 1");
  check("model.temperature", model.temperature > 0.0, "must be > 0");
  check("model.leaky_slope", model.leaky_slope >= 0.0 && model.leaky_slope < 1.0, "must lie in [0, 1)");
  for (std::size_t h : model.hidden) check("model.hidden", h >= 1, "layer widths must be positive");
  try {
    train.validate();
  } catch (const ContractError& e) {
    throw ConfigError("train", e.what());
  }
}

std::string RunConfig::hash() const { return fnv1a_hex(to_yaml(*this)); }

RunConfig parse_run_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<document>", e.msg, e.mark.line >= 0 ? e.mark.line + 1 : 0);
  }
  RunConfig c;
  Section s(root, "");
  s.read_int("seed", c.train.seed);
  s.read("out", c.out);
  s.read_int("bins", c.train.bins);
  read_data(s.sub("data"), c.data);
  read_model(s.sub("model"), c.model);
  read_train(s.sub("train"), c.train);
  read_sgld(s.sub("sgld"), c.train.sgld);
  s.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

template <class T>
std::string list(const std::vector<T>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out + "]";
}

}  // namespace

std::string to_yaml(const RunConfig& c) {
  const auto f = [](double v) { return format_double(v); };
  const auto b = [](bool v) { return v ? "true" : "false"; };
  const DataConfig& d = c.data;
  const TrainConfig& t = c.train;
  const SgldConfig& g = t.sgld;
  std::ostringstream o;
  o << "seed: " << t.seed << '\n';
  o << "out: " << quoted(c.out) << '\n';
  o << "bins: " << t.bins << '\n';
  o << "data:\n";
  o << "  source: " << to_string(d.source) << '\n';
  o << "  num_classes: " << d.num_classes << '\n';
  o << "  dim: " << d.dim << '\n';
  o << "  n_per_class: " << d.n_per_class << '\n';
  o << "  separation: " << f(d.separation) << '\n';
  o << "  n: " << d.n << '\n';
  o << "  noise: " << f(d.noise) << '\n';
  o << "  turns: " << f(d.turns) << '\n';
  o << "  path: " << quoted(d.path) << '\n';
  o << "  label_column: " << d.label_column << '\n';
  o << "  split:\n";
  o << "    train: " << f(d.split.train) << '\n';
  o << "    dev: " << f(d.split.dev) << '\n';
  o << "    test: " << f(d.split.test) << '\n';
  o << "  seed: " << d.seed << '\n';
  o << "  standardize: " << b(d.standardize) << '\n';
  o << "model:\n";
  o << "  hidden: " << list(c.model.hidden) << '\n';
  o << "  activation: " << to_string(c.model.activation) << '\n';
  o << "  leaky_slope: " << f(c.model.leaky_slope) << '\n';
  o << "  temperature: " << f(c.model.temperature) << '\n';
  o << "train:\n";
  o << "  mode: " << to_string(t.mode) << '\n';
  o << "  epochs: " << t.epochs << '\n';
  o << "  batch_size: " << t.batch_size << '\n';
  o << "  lr:\n";
  o << "    base: " << f(t.lr.base) << '\n';
  o << "    warmup_steps: " << t.lr.warmup_steps << '\n';
  o << "    decay_epochs: " << list(t.lr.decay_epochs) << '\n';
  o << "    decay_factor: " << f(t.lr.decay_factor) << '\n';
  o << "  momentum: " << f(t.momentum) << '\n';
  o << "  gen_weight: " << f(t.gen_weight) << '\n';
  o << "  buffer_capacity: " << t.buffer_capacity << '\n';
  o << "  eval_every: " << t.eval_every << '\n';
  o << "  divergence_budget: " << t.divergence_budget << '\n';
  o << "sgld:\n";
  o << "  steps: " << g.steps << '\n';
  o << "  step_size: " << f(g.step_size) << '\n';
  o << "  noise_scale: " << f(g.noise_scale) << '\n';
  o << "  reinit_prob: " << f(g.reinit_prob) << '\n';
  o << "  clip_grad: " << (g.clip_grad ? f(*g.clip_grad) : std::string("none")) << '\n';
  o << "  decouple_noise: " << b(g.decouple_noise) << '\n';
  o << "  box_low: " << f(g.box.low) << '\n';
  o << "  box_high: " << f(g.box.high) << '\n';
  return o.str();
}

}  // namespace jemcal::cli
