#include "jemcal/model_io.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "jemcal/error.hpp"
#include "jemcal/numfmt.hpp"

namespace jemcal {

namespace {

constexpr const char* kModelMagic = "jemcal-model";
constexpr const char* kCalibratorMagic = "jemcal-calibrator";

void put_values(std::ostream& out, std::span<const double> values) {
  for (double v : values) out << ' ' << format_double(v);
}

struct Line {
  std::size_t number = 0;
  std::string key;
  std::vector<std::string> args;
};

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::optional<Line> next() {
    std::string text;
    while (std::getline(in_, text)) {
      ++number_;
      std::istringstream words(text);
      Line line;
      line.number = number_;
      if (!(words >> line.key)) continue;
      if (line.key[0] == '#') continue;
      std::string w;
      while (words >> w) line.args.push_back(std::move(w));
      return line;
    }
    return std::nullopt;
  }

  std::size_t number() const noexcept { return number_; }

 private:
  std::istream& in_;
  std::size_t number_ = 0;
};

double to_double(const Line& line, std::size_t i) {
  if (i >= line.args.size()) throw ParseError("'" + line.key + "' is missing a value", line.number);
  const auto v = parse_double(line.args[i]);
  if (!v) throw ParseError("'" + line.key + "': '" + line.args[i] + "' is not a number", line.number);
  return *v;
}

std::size_t to_size(const Line& line, std::size_t i) {
  const double v = to_double(line, i);
  if (v < 0.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ParseError("'" + line.key + "': '" + line.args[i] + "' is not a non-negative integer", line.number);
  }
  return static_cast<std::size_t>(v);
}

std::vector<double> tail_values(const Line& line, std::size_t from, std::size_t expected) {
  if (line.args.size() != from + expected) {
    throw ParseError("'" + line.key + "' expects " + std::to_string(expected) + " values, found " +
                         std::to_string(line.args.size() < from ? 0 : line.args.size() - from),
                     line.number);
  }
  std::vector<double> out;
  out.reserve(expected);
  for (std::size_t i = from; i < line.args.size(); ++i) out.push_back(to_double(line, i));
  return out;
}

const std::string& single(const Line& line) {
  if (line.args.size() != 1) throw ParseError("'" + line.key + "' expects exactly one value", line.number);
  return line.args[0];
}

void expect_header(LineReader& reader, const char* magic) {
  auto first = reader.next();
  if (!first || first->key != magic) {
    throw ParseError(std::string("not a ") + magic + " file (bad magic line)", first ? first->number : 1);
  }
  auto version = reader.next();
  if (!version || version->key != "version") {
    throw ParseError("missing mandatory 'version' field", version ? version->number : reader.number());
  }
  const double v = to_double(*version, 0);
  if (v != kModelFormatVersion) {
    throw ParseError("unsupported format version " + version->args[0], version->number);
  }
}

template <class F>
F with_file(const std::filesystem::path& path, F (*read)(std::istream&)) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return read(in);
}

}  // namespace

void write_model(std::ostream& out, const ModelFile& file) {
  const EnergyModel& m = file.model;
  const ModelSpec& spec = m.spec();
  out << kModelMagic << ' ' << kModelFormatVersion << '\n';
  out << "version " << kModelFormatVersion << '\n';
  if (!file.config_hash.empty()) out << "config_hash " << file.config_hash << '\n';
  out << "mode " << file.mode << '\n';
  out << "input_dim " << spec.input_dim << '\n';
  out << "num_classes " << spec.num_classes << '\n';
  out << "hidden";
  for (std::size_t h : spec.hidden) out << ' ' << h;
  out << '\n';
  out << "activation " << to_string(spec.activation) << '\n';
  out << "leaky_slope " << format_double(spec.leaky_slope) << '\n';
  out << "temperature " << format_double(spec.temperature) << '\n';
  if (file.normalization) {
    const Normalization& n = *file.normalization;
    out << "normalization " << n.raw_dim;
    for (std::size_t k : n.kept) out << ' ' << k;
    out << "\nnorm_mean";
    put_values(out, n.mean);
    out << "\nnorm_std";
    put_values(out, n.stddev);
    out << '\n';
  }
  const auto layers = m.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out << 'w' << i << ' ' << layers[i].weight.rows() << ' ' << layers[i].weight.cols();
    put_values(out, layers[i].weight.values());
    out << "\nb" << i << ' ' << layers[i].bias.size();
    put_values(out, layers[i].bias.values());
    out << '\n';
  }
  if (file.buffer) {
    const ReplayBuffer& b = *file.buffer;
    out << "buffer " << b.capacity() << ' ' << b.dim() << ' ' << b.fill() << ' ' << format_double(b.box().low) << ' '
        << format_double(b.box().high);
    put_values(out, b.rows());
    out << '\n';
  }
  out << "end\n";
}

ModelFile read_model(std::istream& in) {
  LineReader reader(in);
  expect_header(reader, kModelMagic);

  ModelSpec spec;
  spec.hidden.clear();
  std::string mode = "softmax", hash;
  std::optional<Normalization> norm;
  std::optional<ReplayBuffer> buffer;
  std::map<std::size_t, Tensor> weights, biases;
  bool have_dim = false, have_classes = false, have_hidden = false, ended = false;

  while (auto line = reader.next()) {
    const Line& l = *line;
    const std::string& k = l.key;
    if (k == "end") {
      ended = true;
      break;
    } else if (k == "config_hash") {
      hash = single(l);
    } else if (k == "mode") {
      mode = single(l);
      if (mode != "softmax" && mode != "jem") throw ParseError("unknown mode '" + mode + "'", l.number);
    } else if (k == "input_dim") {
      single(l);
      spec.input_dim = to_size(l, 0);
      have_dim = true;
    } else if (k == "num_classes") {
      single(l);
      spec.num_classes = to_size(l, 0);
      have_classes = true;
    } else if (k == "hidden") {
      for (std::size_t i = 0; i < l.args.size(); ++i) spec.hidden.push_back(to_size(l, i));
      have_hidden = true;
    } else if (k == "activation") {
      try {
        spec.activation = activation_from_string(single(l));
      } catch (const Error& e) {
        throw ParseError(e.what(), l.number);
      }
    } else if (k == "leaky_slope") {
      single(l);
      spec.leaky_slope = to_double(l, 0);
    } else if (k == "temperature") {
      single(l);
      spec.temperature = to_double(l, 0);
      if (!(spec.temperature > 0.0)) throw ParseError("temperature must be positive", l.number);
    } else if (k == "normalization") {
      Normalization n;
      n.raw_dim = to_size(l, 0);
      for (std::size_t i = 1; i < l.args.size(); ++i) n.kept.push_back(to_size(l, i));
      norm = std::move(n);
    } else if (k == "norm_mean" || k == "norm_std") {
      if (!norm) throw ParseError("'" + k + "' before 'normalization'", l.number);
      (k == "norm_mean" ? norm->mean : norm->stddev) = tail_values(l, 0, norm->kept.size());
    } else if ((k[0] == 'w' || k[0] == 'b') && k.size() > 1 && k.find_first_not_of("0123456789", 1) == std::string::npos) {
      const std::size_t idx = std::stoul(k.substr(1));
      if (k[0] == 'w') {
        const std::size_t r = to_size(l, 0), c = to_size(l, 1);
        weights.insert_or_assign(idx, Tensor::matrix(r, c, tail_values(l, 2, r * c)));
      } else {
        const std::size_t n = to_size(l, 0);
        biases.insert_or_assign(idx, Tensor::vector(tail_values(l, 1, n)));
      }
    } else if (k == "buffer") {
      const std::size_t cap = to_size(l, 0), dim = to_size(l, 1), fill = to_size(l, 2);
      const DataBox box{to_double(l, 3), to_double(l, 4)};
      try {
        buffer = ReplayBuffer::restore(cap, dim, box, tail_values(l, 5, fill * dim));
      } catch (const ParseError&) {
        throw;
      } catch (const Error& e) {
        throw ParseError(std::string("bad buffer: ") + e.what(), l.number);
      }
    } else {
      throw ParseError("unknown key '" + k + "'", l.number);
    }
  }
  if (!ended) throw ParseError("truncated model file (no 'end' line)", reader.number());
  if (!have_dim || !have_classes || !have_hidden) {
    throw ParseError("model file lacks input_dim, num_classes or hidden", reader.number());
  }
  const std::size_t n_layers = spec.hidden.size() + 1;
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < n_layers; ++i) {
    auto w = weights.find(i);
    auto b = biases.find(i);
    if (w == weights.end() || b == biases.end()) {
      throw ParseError("missing parameters for layer " + std::to_string(i), reader.number());
    }
    layers.push_back(Layer{std::move(w->second), std::move(b->second)});
  }
  if (weights.size() != n_layers || biases.size() != n_layers) {
    throw ParseError("layer count does not match 'hidden'", reader.number());
  }
  if (norm && (norm->mean.size() != norm->kept.size() || norm->stddev.size() != norm->kept.size())) {
    throw ParseError("incomplete normalization statistics", reader.number());
  }
  try {
    EnergyModel model(spec, std::move(layers));
    return ModelFile{std::move(model), mode, hash, std::move(norm), std::move(buffer)};
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("inconsistent model: ") + e.what(), reader.number());
  }
}

void save_model(const std::filesystem::path& path, const ModelFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  write_model(out, file);
  if (!out) throw InputError("failed writing '" + path.string() + "'");
}

ModelFile load_model(const std::filesystem::path& path) { return with_file<ModelFile>(path, &read_model); }

void write_calibrator(std::ostream& out, const Calibrator& calibrator) {
  out << kCalibratorMagic << ' ' << kModelFormatVersion << '\n';
  out << "version " << kModelFormatVersion << '\n';
  if (const auto* t = std::get_if<TemperatureCalibrator>(&calibrator)) {
    out << "method temperature\n";
    out << "temperature " << format_double(t->temperature) << '\n';
  } else {
    const auto& a = std::get<AffineCalibrator>(calibrator);
    out << "method logistic\n";
    out << "variant " << to_string(a.variant) << '\n';
    out << "classes " << a.bias.size() << '\n';
    out << "weight";
    put_values(out, a.weight.values());
    out << "\nbias";
    put_values(out, a.bias);
    out << '\n';
  }
  out << "end\n";
}

Calibrator read_calibrator(std::istream& in) {
  LineReader reader(in);
  expect_header(reader, kCalibratorMagic);
  std::string method;
  std::optional<double> temperature;
  std::optional<LogisticVariant> variant;
  std::optional<std::size_t> classes;
  std::optional<Line> weight, bias;
  bool ended = false;
  while (auto line = reader.next()) {
    const Line& l = *line;
    if (l.key == "end") {
      ended = true;
      break;
    } else if (l.key == "method") {
      method = single(l);
    } else if (l.key == "temperature") {
      single(l);
      temperature = to_double(l, 0);
    } else if (l.key == "variant") {
      try {
        variant = logistic_variant_from_string(single(l));
      } catch (const ParseError&) {
        throw;
      } catch (const Error& e) {
        throw ParseError(e.what(), l.number);
      }
    } else if (l.key == "classes") {
      single(l);
      classes = to_size(l, 0);
    } else if (l.key == "weight") {
      weight = l;
    } else if (l.key == "bias") {
      bias = l;
    } else {
      throw ParseError("unknown key '" + l.key + "'", l.number);
    }
  }
  if (!ended) throw ParseError("truncated calibrator file (no 'end' line)", reader.number());
  if (method == "temperature") {
    if (!temperature || !(*temperature > 0.0)) throw ParseError("missing or invalid temperature", reader.number());
    return TemperatureCalibrator{*temperature};
  }
  if (method != "logistic") throw ParseError("unknown calibration method '" + method + "'", reader.number());
  if (!variant || !classes || !weight || !bias) {
    throw ParseError("logistic calibrator needs variant, classes, weight and bias", reader.number());
  }
  const std::size_t k = *classes;
  AffineCalibrator a;
  a.variant = *variant;
  a.weight = Tensor::matrix(k, k, tail_values(*weight, 0, k * k));
  a.bias = tail_values(*bias, 0, k);
  return a;
}

void save_calibrator(const std::filesystem::path& path, const Calibrator& calibrator) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  write_calibrator(out, calibrator);
}

Calibrator load_calibrator(const std::filesystem::path& path) {
  return with_file<Calibrator>(path, &read_calibrator);
}

}  // namespace jemcal
