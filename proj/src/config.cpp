#include "polymc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "polymc/errors.hpp"

namespace polymc::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

} // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    cfg.entries_.emplace_back(key, value);
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string Config::emit() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

bool Config::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == key; });
}

std::optional<std::string> Config::get(const std::string& key) const {
  std::optional<std::string> out;
  for (const auto& [k, v] : entries_)
    if (k == key) out = v;
  return out;
}

std::vector<std::string> Config::get_all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (k == key) out.push_back(v);
  return out;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto v = get(key);
  return v ? *v : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const double x = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a real number, got '" + *v + "'");
  }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::int64_t x = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), x);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size())
    throw ConfigError(key + ": expected an integer, got '" + *v + "'");
  return x;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::uint64_t x = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), x);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size())
    throw ConfigError(key + ": expected an unsigned integer, got '" + *v + "'");
  return x;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  const auto v = get(key);
  if (!v || v->empty()) return {};
  std::vector<double> out;
  for (const auto& part : split(*v, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected comma-separated reals, got '" + *v + "'");
    }
  }
  return out;
}

std::vector<std::int64_t> Config::get_ints(const std::string& key) const {
  const auto v = get(key);
  if (!v || v->empty()) return {};
  std::vector<std::int64_t> out;
  for (const auto& part : split(*v, ',')) {
    std::int64_t x = 0;
    const auto res = std::from_chars(part.data(), part.data() + part.size(), x);
    if (res.ec != std::errc() || res.ptr != part.data() + part.size())
      throw ConfigError(key + ": expected comma-separated integers, got '" + *v + "'");
    out.push_back(x);
  }
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  entries_.erase(std::remove_if(entries_.begin(), entries_.end(),
                                [&](const auto& e) { return e.first == key; }),
                 entries_.end());
  entries_.emplace_back(key, value);
}

void Config::append(const std::string& key, const std::string& value) {
  entries_.emplace_back(key, value);
}

std::uint64_t Config::hash() const {
  const std::string canon = emit();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------

walk::WalkModel walk_from_config(const Config& cfg) {
  const std::string kind = cfg.get_string("walk.kind", "nn3d");
  if (kind == "nn3d") return walk::WalkModel::nn3d();
  if (kind != "custom") throw ConfigError("walk.kind: expected nn3d|custom, got '" + kind + "'");

  const int d = static_cast<int>(cfg.get_int("walk.d", 3));
  const auto lines = cfg.get_all("walk.step");
  if (lines.empty()) throw ConfigError("walk.kind=custom requires walk.step entries");
  std::vector<walk::Step> steps;
  for (const auto& line : lines) {
    // "offset=dx,dy,dz prob=p"
    walk::Step step;
    bool have_offset = false, have_prob = false;
    for (const auto& tok : split(line, ' ')) {
      if (tok.empty()) continue;
      const auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw ConfigError("walk.step: expected 'offset=dx,dy,dz prob=p', got '" + line + "'");
      const std::string k = tok.substr(0, eq);
      const std::string v = tok.substr(eq + 1);
      if (k == "offset") {
        for (const auto& c : split(v, ',')) {
          std::int64_t x = 0;
          const auto res = std::from_chars(c.data(), c.data() + c.size(), x);
          if (res.ec != std::errc()) throw ConfigError("walk.step offset: bad integer '" + c + "'");
          step.offset.push_back(x);
        }
        have_offset = true;
      } else if (k == "prob") {
        try {
          step.prob = std::stod(v);
        } catch (const std::exception&) {
          throw ConfigError("walk.step prob: bad real '" + v + "'");
        }
        have_prob = true;
      } else {
        throw ConfigError("walk.step: unknown token '" + k + "'");
      }
    }
    if (!have_offset || !have_prob)
      throw ConfigError("walk.step: expected 'offset=dx,dy,dz prob=p', got '" + line + "'");
    steps.push_back(std::move(step));
  }
  return walk::WalkModel::create(d, std::move(steps));
}

field::FieldSpec field_from_config(const Config& cfg) {
  const std::string kind_name = cfg.get_string("field.kind", "iid_gaussian");
  const field::Kind kind = field::parse_kind(kind_name);
  const int d = static_cast<int>(cfg.get_int("walk.d", 3));
  field::FieldSpec spec;
  switch (kind) {
    case field::Kind::kIidGaussian:
      spec = field::FieldSpec::iid_gaussian(cfg.get_double("field.sigma", 1.0), d);
      break;
    case field::Kind::kIidBernoulli: {
      const auto values = cfg.get_doubles("field.values");
      double v0 = 0.0, v1 = 1.0;
      if (!values.empty()) {
        if (values.size() != 2) throw ConfigError("field.values: expected two reals v0,v1");
        v0 = values[0];
        v1 = values[1];
      }
      spec = field::FieldSpec::iid_bernoulli(cfg.get_double("field.p", 0.5), v0, v1, d);
      break;
    }
    case field::Kind::kArTime:
      spec = field::FieldSpec::ar_time(cfg.get_double("field.a", 0.5),
                                       cfg.get_double("field.sigma", 1.0), d);
      break;
    case field::Kind::kGffGaussian: {
      const auto box = cfg.get_ints("field.box");
      if (box.size() != 3) throw ConfigError("field.box: expected t_lo,t_hi,space_radius");
      spec = field::FieldSpec::gff(field::BoxSpec{box[0], box[1], box[2]},
                                   cfg.get_int("field.margin", 4), d);
      break;
    }
  }
  spec.corr.C = cfg.get_double("field.C", spec.corr.C);
  if (cfg.has("field.g")) spec.corr.g = cfg.get_double("field.g", spec.corr.g);
  return spec;
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "walk.kind", "walk.d", "walk.step",
      "field.kind", "field.sigma", "field.p", "field.values", "field.a",
      "field.box", "field.margin", "field.C", "field.g",
      "scan.betas", "scan.Ns",
      "mc.n_disorder", "mc.n_paths",
      "reg.L", "reg.l", "reg.blocks", "reg.inner", "reg.n_replicas", "reg.slab_mult",
      "conc.epsilon",
      "tau.Ls", "tau.p", "tau.samples",
      "annealed.mode",
      "kernels.backend",
      "seed", "workers", "out",
  };
  return keys;
}

std::vector<std::string> validate_config(const Config& cfg) {
  std::vector<std::string> problems;
  const auto& keys = known_keys();
  for (const auto& [k, v] : cfg.entries()) {
    (void)v;
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      problems.push_back("unknown key: " + k);
  }

  auto check = [&problems](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.emplace_back(e.what());
    }
  };

  // dimension
  int d = 3;
  check([&] { d = static_cast<int>(cfg.get_int("walk.d", 3)); });
  if (d < 3) problems.emplace_back("transience required: d >= 3");

  // step law constraints, each reported separately
  const std::string walk_kind = cfg.get_string("walk.kind", "nn3d");
  if (walk_kind == "custom") {
    try {
      double sum = 0.0;
      std::set<std::string> seen;
      bool any = false;
      for (const auto& line : cfg.get_all("walk.step")) {
        any = true;
        std::string offset_token;
        double prob = -1.0;
        for (const auto& tok : split(line, ' ')) {
          if (tok.rfind("offset=", 0) == 0) offset_token = tok.substr(7);
          if (tok.rfind("prob=", 0) == 0) prob = std::stod(tok.substr(5));
        }
        if (offset_token.empty() || prob < 0)
          problems.push_back("walk.step: expected 'offset=dx,dy,dz prob=p', got '" + line + "'");
        if (prob == 0.0) problems.push_back("walk step probabilities must be strictly positive");
        if (!offset_token.empty() && !seen.insert(offset_token).second)
          problems.push_back("walk step offsets must be distinct");
        if (!offset_token.empty() &&
            static_cast<int>(split(offset_token, ',').size()) != d && d >= 3)
          problems.push_back("walk step offset has wrong dimension (expected " + std::to_string(d) + ")");
        if (prob > 0) sum += prob;
      }
      if (!any) problems.emplace_back("walk.kind=custom requires walk.step entries");
      if (any && std::abs(sum - 1.0) > 1e-12)
        problems.push_back("walk step probabilities sum to " + std::to_string(sum) + ", expected 1");
    } catch (const std::exception& e) {
      problems.emplace_back(e.what());
    }
  } else if (walk_kind != "nn3d") {
    problems.push_back("walk.kind: expected nn3d|custom, got '" + walk_kind + "'");
  }

  // field ranges, independent of the dimension check above
  check([&] {
    const field::Kind kind = field::parse_kind(cfg.get_string("field.kind", "iid_gaussian"));
    switch (kind) {
      case field::Kind::kIidGaussian:
      case field::Kind::kArTime:
        if (!(cfg.get_double("field.sigma", 1.0) > 0.0))
          throw ConfigError("field.sigma must be > 0");
        if (kind == field::Kind::kArTime) {
          const double a = cfg.get_double("field.a", 0.5);
          if (!(a > 0.0 && a < 1.0)) throw ConfigError("field.a must be in (0,1)");
        }
        break;
      case field::Kind::kIidBernoulli: {
        const double p = cfg.get_double("field.p", 0.5);
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("field.p must be in (0,1)");
        const auto values = cfg.get_doubles("field.values");
        if (!values.empty() && (values.size() != 2 || !(values[0] < values[1])))
          throw ConfigError("field.values must satisfy v0 < v1");
        break;
      }
      case field::Kind::kGffGaussian: {
        const auto box = cfg.get_ints("field.box");
        if (box.size() != 3 || box[0] < 0 || box[1] < box[0] || box[2] < 0)
          throw ConfigError("field.box must describe a box in Z_+ x Z^d (t_lo,t_hi,space_radius)");
        if (cfg.get_int("field.margin", 4) < 0) throw ConfigError("field.margin must be >= 0");
        break;
      }
    }
  });
  check([&] {
    if (!(cfg.get_double("field.C", 1.0) > 0.0) || !(cfg.get_double("field.g", 1.0) > 0.0))
      throw ConfigError("field correlation params require C > 0, g > 0");
  });
  check([&] {
    for (double b : cfg.get_doubles("scan.betas"))
      if (b < 0.0) throw ConfigError("scan.betas: beta must be >= 0");
  });
  check([&] {
    for (std::int64_t n : cfg.get_ints("scan.Ns"))
      if (n < 1) throw ConfigError("scan.Ns: N must be >= 1");
  });
  check([&] {
    if (cfg.get_int("mc.n_disorder", 2) < 2) throw ConfigError("mc.n_disorder must be >= 2");
  });
  check([&] {
    if (cfg.get_int("reg.L", 2) < 1) throw ConfigError("reg.L must be >= 1");
    if (!(cfg.get_double("reg.l", 1.0) > 0.0)) throw ConfigError("reg.l must be > 0");
  });
  check([&] {
    if (cfg.has("annealed.mode")) {
      const std::string m = cfg.get_string("annealed.mode", "auto");
      if (m != "auto" && m != "analytic" && m != "mc")
        throw ConfigError("annealed.mode: expected auto|analytic|mc");
    }
  });
  check([&] {
    if (cfg.has("kernels.backend")) {
      const std::string m = cfg.get_string("kernels.backend", "auto");
      if (m != "auto" && m != "scalar" && m != "avx2")
        throw ConfigError("kernels.backend: expected auto|scalar|avx2");
    }
  });
  check([&] {
    if (cfg.get_int("workers", 1) < 1) throw ConfigError("workers must be >= 1");
  });
  return problems;
}

} // namespace polymc::config
