#include "caila/config.hpp"

#include <cerrno>
#include <climits>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "caila/error.hpp"

namespace caila {

namespace {

std::string trim(const std::string& s) {
  const char* ws = " \t\r";
  const std::size_t a = s.find_first_not_of(ws);
  if (a == std::string::npos) return {};
  const std::size_t b = s.find_last_not_of(ws);
  return s.substr(a, b - a + 1);
}

long long parse_ll(const std::string& v) {
  if (v.empty()) throw ConfigError("empty value, expected an integer");
  char* end = nullptr;
  errno = 0;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size())
    throw ConfigError("'" + v + "' is not an integer");
  return x;
}

int parse_int(const std::string& v) {
  const long long x = parse_ll(v);
  if (x < INT_MIN || x > INT_MAX) throw ConfigError("'" + v + "' is out of int range");
  return int(x);
}

std::uint64_t parse_u64(const std::string& v) {
  if (v.empty() || v[0] == '-') throw ConfigError("'" + v + "' is not a non-negative integer");
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size())
    throw ConfigError("'" + v + "' is not a non-negative integer");
  return std::uint64_t(x);
}

double parse_double(const std::string& v) {
  if (v.empty()) throw ConfigError("empty value, expected a number");
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size()) throw ConfigError("'" + v + "' is not a number");
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + v + "' is not a bool (use true or false)");
}

/// Shortest decimal form that parses back to exactly x.
std::string fmt_double(double x) {
  char buf[48];
  for (int prec : {15, 16, 17}) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

template <class T>
struct Field {
  std::string key;
  std::function<void(T&, const std::string&)> set;
  std::function<std::string(const T&)> get;
  const char* comment = nullptr;  // appended to the serialized line
};

template <class T>
Field<T> int_field(const char* key, int T::*m, const char* comment = nullptr) {
  return {key, [m](T& t, const std::string& v) { t.*m = parse_int(v); },
          [m](const T& t) { return std::to_string(t.*m); }, comment};
}

template <class T>
Field<T> double_field(const char* key, double T::*m, const char* comment = nullptr) {
  return {key, [m](T& t, const std::string& v) { t.*m = parse_double(v); },
          [m](const T& t) { return fmt_double(t.*m); }, comment};
}

template <class T>
Field<T> bool_field(const char* key, bool T::*m, const char* comment = nullptr) {
  return {key, [m](T& t, const std::string& v) { t.*m = parse_bool(v); },
          [m](const T& t) { return std::string(t.*m ? "true" : "false"); }, comment};
}

template <class T>
Field<T> string_field(const char* key, std::string T::*m, const char* comment = nullptr) {
  return {key, [m](T& t, const std::string& v) { t.*m = v; },
          [m](const T& t) { return t.*m; }, comment};
}

std::vector<Field<EncoderConfig>> encoder_fields() {
  using E = EncoderConfig;
  return {
      int_field<E>("d", &E::d, "embedding width"),
      int_field<E>("heads", &E::heads),
      int_field<E>("n_vision", &E::n_vision, "vision depth"),
      int_field<E>("n_language", &E::n_language, "language depth"),
      int_field<E>("moa_layers", &E::moa_layers,
                   "trailing vision depths that mix concept streams; 6 at full scale"),
      int_field<E>("reduction", &E::reduction, "adapter bottleneck divisor"),
      int_field<E>("ffn_mult", &E::ffn_mult),
      int_field<E>("patch", &E::patch, "patch edge in pixels"),
      int_field<E>("image_hw", &E::image_hw),
      int_field<E>("max_text_len", &E::max_text_len),
      {"activation",
       [](E& e, const std::string& v) { e.activation = activation_from_name(v); },
       [](const E& e) { return std::string(activation_name(e.activation)); }, nullptr},
      bool_field<E>("vision_adapters", &E::vision_adapters),
      bool_field<E>("language_adapters", &E::language_adapters),
      bool_field<E>("vision_moa", &E::vision_moa, "per-concept mixture in the vision tail"),
      bool_field<E>("language_moa", &E::language_moa, "average-based language mixture"),
  };
}

std::vector<Field<TrainConfig>> train_fields() {
  using T = TrainConfig;
  return {
      double_field<T>("lr", &T::lr, "2e-05 at full scale; a tiny random backbone trains hotter"),
      double_field<T>("weight_decay", &T::weight_decay),
      bool_field<T>("decoupled_decay", &T::decoupled_decay,
                    "false folds the decay into the gradient"),
      double_field<T>("tau_comp", &T::tau_comp, "composition softmax temperature"),
      double_field<T>("tau_attr", &T::tau_attr),
      double_field<T>("tau_obj", &T::tau_obj),
      int_field<T>("batch", &T::batch),
      int_field<T>("epochs", &T::epochs, "adapter-stage epochs"),
      int_field<T>("stage0_epochs", &T::stage0_epochs, "backbone pretraining epochs"),
      double_field<T>("shift_ratio", &T::shift_ratio,
                      "fraction of each batch replaced by fused donor features"),
      {"seed", [](T& t, const std::string& v) { t.seed = parse_u64(v); },
       [](const T& t) { return std::to_string(t.seed); }, nullptr},
  };
}

/// Re-targets a field table at a member of an outer struct.
template <class Outer, class Inner>
void lift_into(std::vector<Field<Outer>>& out, std::vector<Field<Inner>> fields,
               Inner Outer::*member) {
  for (Field<Inner>& f : fields) {
    out.push_back({std::move(f.key),
                   [member, set = std::move(f.set)](Outer& o, const std::string& v) {
                     set(o.*member, v);
                   },
                   [member, get = std::move(f.get)](const Outer& o) { return get(o.*member); },
                   f.comment});
  }
}

std::vector<Field<RunConfig>> run_fields() {
  using R = RunConfig;
  std::vector<Field<R>> out = {
      string_field<R>("data", &R::data_dir, "dataset directory (required)"),
      {"world", [](R& r, const std::string& v) { r.world = world_from_name(v); },
       [](const R& r) { return std::string(world_name(r.world)); },
       "closed or open candidate set"},
      string_field<R>("checkpoint", &R::checkpoint_path),
      string_field<R>("metrics", &R::metrics_path),
      string_field<R>("report", &R::report_path),
      string_field<R>("curve", &R::curve_path),
  };
  lift_into(out, encoder_fields(), &R::encoder);
  lift_into(out, train_fields(), &R::train);
  return out;
}

template <class T>
T parse_flat(const std::string& text, const std::vector<Field<T>>& fields) {
  T cfg{};
  std::set<std::string> used;
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::size_t hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field<T>* field = nullptr;
    for (const Field<T>& f : fields)
      if (f.key == key) {
        field = &f;
        break;
      }
    if (!field)
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!used.insert(key).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      field->set(cfg, value);
    } catch (const Error& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

template <class T>
void serialize_fields(std::ostream& os, const T& cfg, const std::vector<Field<T>>& fields) {
  for (const Field<T>& f : fields) {
    os << f.key << " = " << f.get(cfg);
    if (f.comment) os << "  # " << f.comment;
    os << "\n";
  }
}

}  // namespace

void RunConfig::validate() const {
  encoder.validate();
  train.validate();
  if (data_dir.empty()) throw ConfigError("config: 'data' is required");
  if (checkpoint_path.empty() || metrics_path.empty() || report_path.empty() ||
      curve_path.empty())
    throw ConfigError("config: output paths must be non-empty");
}

RunConfig parse_run_config(const std::string& text) { return parse_flat(text, run_fields()); }

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config file '" + path + "'");
  const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "# flat key = value lines; '#' comments out the rest of a line\n";
  os << "\n# data and outputs\n";
  const std::vector<Field<RunConfig>> fields = run_fields();
  serialize_fields(os, cfg, std::vector<Field<RunConfig>>(fields.begin(), fields.begin() + 6));
  os << "\n# encoder geometry\n";
  std::vector<Field<RunConfig>> enc(fields.begin() + 6, fields.begin() + 6 + 15);
  serialize_fields(os, cfg, enc);
  os << "\n# optimization\n";
  std::vector<Field<RunConfig>> tr(fields.begin() + 6 + 15, fields.end());
  serialize_fields(os, cfg, tr);
  return os.str();
}

std::string serialize_encoder_config(const EncoderConfig& cfg) {
  std::ostringstream os;
  serialize_fields(os, cfg, encoder_fields());
  return os.str();
}

EncoderConfig parse_encoder_config(const std::string& text) {
  return parse_flat(text, encoder_fields());
}

}  // namespace caila
