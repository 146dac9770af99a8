#include "osdsr/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "osdsr/error.hpp"

namespace osdsr {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, sep)) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

std::vector<IniSection> parse_ini(const std::string& text) {
  std::vector<IniSection> out;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": unterminated section");
      out.push_back({trim(line.substr(1, line.size() - 2)), lineno, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": expected key = value");
    }
    if (out.empty()) throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": key outside a section");
    out.back().entries.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
  }
  return out;
}

namespace {

[[noreturn]] void bad_value(const std::string& section, const std::string& key, const std::string& value,
                            const char* expected) {
  throw Error(ErrorKind::Config, "[" + section + "] " + key + " = '" + value + "': expected " + expected);
}

long long to_int(const std::string& sec, const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  bad_value(sec, key, v, "an integer");
}

std::uint64_t to_u64(const std::string& sec, const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long x = std::stoull(v, &pos, 0);
      if (pos == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  bad_value(sec, key, v, "a non-negative integer");
}

double to_double(const std::string& sec, const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  bad_value(sec, key, v, "a number");
}

bool to_bool(const std::string& sec, const std::string& key, const std::string& v) {
  std::string l = v;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (l == "true" || l == "on" || l == "yes" || l == "1") return true;
  if (l == "false" || l == "off" || l == "no" || l == "0") return false;
  bad_value(sec, key, v, "a boolean");
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define OSDSR_INT(S, K, EXPR)                                                                       \
  Field {                                                                                           \
    S, K, [](RunConfig& c, const std::string& v) { EXPR = static_cast<decltype(EXPR)>(to_int(S, K, v)); }, \
        [](const RunConfig& c) { return std::to_string(EXPR); }                                     \
  }
#define OSDSR_DBL(S, K, EXPR)                                                                \
  Field {                                                                                    \
    S, K, [](RunConfig& c, const std::string& v) { EXPR = to_double(S, K, v); },             \
        [](const RunConfig& c) { return num(EXPR); }                                         \
  }
#define OSDSR_BOOL(S, K, EXPR)                                                               \
  Field {                                                                                    \
    S, K, [](RunConfig& c, const std::string& v) { EXPR = to_bool(S, K, v); },               \
        [](const RunConfig& c) { return std::string((EXPR) ? "true" : "false"); }            \
  }
#define OSDSR_STR(S, K, EXPR)                                                                \
  Field {                                                                                    \
    S, K, [](RunConfig& c, const std::string& v) { EXPR = v; }, [](const RunConfig& c) { return EXPR; } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"run", "seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64("run", "seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      OSDSR_INT("run", "scale_factor", c.scale_factor),
      OSDSR_DBL("run", "lr", c.learning_rate),
      OSDSR_INT("run", "batch_size", c.batch_size),
      OSDSR_INT("run", "steps", c.steps),
      OSDSR_INT("run", "checkpoint_every", c.checkpoint_every),
      OSDSR_INT("run", "synthetic_pairs", c.synthetic_pairs),
      OSDSR_INT("run", "eval_pairs", c.eval_pairs),

      Field{"dtsm", "candidates",
            [](RunConfig& c, const std::string& v) {
              std::vector<int> steps;
              for (const auto& s : split_list(v)) steps.push_back(static_cast<int>(to_int("dtsm", "candidates", s)));
              c.candidates = CandidateSet(std::move(steps));
            },
            [](const RunConfig& c) { return join_ints(c.candidates.steps()); }},
      OSDSR_DBL("dtsm", "temperature", c.selector.temperature),
      OSDSR_DBL("dtsm", "anneal_rate", c.selector.anneal_rate),
      OSDSR_DBL("dtsm", "temperature_min", c.selector.temperature_min),
      OSDSR_BOOL("dtsm", "gumbel_noise", c.selector.noise_enabled),
      OSDSR_INT("dtsm", "conv_channels", c.selector.conv_channels),
      OSDSR_INT("dtsm", "resblocks", c.selector.n_resblocks),
      OSDSR_INT("dtsm", "mlp_hidden", c.selector.mlp_hidden),
      Field{"dtsm", "fixed_t",
            [](RunConfig& c, const std::string& v) {
              if (v == "max" || v.empty()) {
                c.fixed_t.reset();
              } else {
                c.fixed_t = static_cast<int>(to_int("dtsm", "fixed_t", v));
              }
            },
            [](const RunConfig& c) { return c.fixed_t ? std::to_string(*c.fixed_t) : std::string("max"); }},

      OSDSR_DBL("loss", "lambda1", c.loss.lambda1),
      OSDSR_DBL("loss", "lambda2", c.loss.lambda2),
      OSDSR_DBL("loss", "lambda3", c.loss.lambda3),
      OSDSR_DBL("loss", "lambda4", c.loss.lambda4),

      OSDSR_DBL("degrade", "blur_sigma", c.degrade.blur_sigma),
      OSDSR_INT("degrade", "downscale", c.degrade.downscale),
      OSDSR_DBL("degrade", "noise_sigma", c.degrade.noise_sigma),
      Field{"degrade", "jpeg_quality",
            [](RunConfig& c, const std::string& v) {
              if (v == "none") {
                c.degrade.jpeg_quality.reset();
              } else {
                c.degrade.jpeg_quality = static_cast<int>(to_int("degrade", "jpeg_quality", v));
              }
            },
            [](const RunConfig& c) {
              return c.degrade.jpeg_quality ? std::to_string(*c.degrade.jpeg_quality) : std::string("none");
            }},
      OSDSR_INT("degrade", "crop_size", c.crop_size),

      OSDSR_INT("lora", "rank", c.lora.rank),
      OSDSR_DBL("lora", "scaling", c.lora.scaling),
      Field{"lora", "targets",
            [](RunConfig& c, const std::string& v) {
              c.lora.targets.clear();
              for (const auto& s : split_list(v)) {
                try {
                  c.lora.targets.push_back(parse_adapter_target(s));
                } catch (const Error&) {
                  bad_value("lora", "targets", v, "a list of encoder/unet");
                }
              }
            },
            [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.lora.targets.size(); ++i) {
                out += (i ? ", " : "") + std::string(to_string(c.lora.targets[i]));
              }
              return out;
            }},

      OSDSR_DBL("optim", "beta1", c.optim.beta1),
      OSDSR_DBL("optim", "beta2", c.optim.beta2),
      OSDSR_DBL("optim", "eps", c.optim.eps),
      OSDSR_DBL("optim", "weight_decay", c.optim.weight_decay),
      OSDSR_DBL("optim", "grad_clip", c.optim.grad_clip),
      Field{"optim", "selector_lr",
            [](RunConfig& c, const std::string& v) {
              if (v == "shared" || v.empty()) {
                c.optim.selector_lr.reset();
              } else {
                c.optim.selector_lr = to_double("optim", "selector_lr", v);
              }
            },
            [](const RunConfig& c) { return c.optim.selector_lr ? num(*c.optim.selector_lr) : std::string("shared"); }},

      OSDSR_STR("model", "backbone", c.model.backbone),
      Field{"model", "model_seed",
            [](RunConfig& c, const std::string& v) { c.model.model_seed = to_u64("model", "model_seed", v); },
            [](const RunConfig& c) { return std::to_string(c.model.model_seed); }},
      OSDSR_INT("model", "latent_factor", c.model.toy.latent_factor),
      OSDSR_INT("model", "latent_channels", c.model.toy.latent_channels),
      OSDSR_INT("model", "encoder_width", c.model.toy.encoder_width),
      OSDSR_INT("model", "unet_width", c.model.toy.unet_width),
      OSDSR_INT("model", "time_embedding_dim", c.model.toy.time_embedding_dim),
      OSDSR_BOOL("model", "identity_prior", c.model.toy.identity_prior),
      OSDSR_STR("model", "provider", c.model.provider),
      OSDSR_INT("model", "provider_dim", c.model.provider_dim),
      OSDSR_INT("model", "provider_resolution", c.model.provider_resolution),
      OSDSR_STR("model", "perceptual", c.model.perceptual),

      OSDSR_STR("paths", "gt_dir", c.paths.gt_dir),
      OSDSR_STR("paths", "manifest", c.paths.manifest),
      OSDSR_STR("paths", "lr_dir", c.paths.lr_dir),
      OSDSR_STR("paths", "sr_dir", c.paths.sr_dir),
      OSDSR_STR("paths", "checkpoint", c.paths.checkpoint),
      OSDSR_STR("paths", "out_dir", c.paths.out_dir),
  };
  return f;
}

#undef OSDSR_INT
#undef OSDSR_DBL
#undef OSDSR_BOOL
#undef OSDSR_STR

const char* const kSectionOrder[] = {"run", "dtsm", "loss", "attributes", "degrade", "lora", "optim", "model", "paths"};

}  // namespace

void apply_setting(RunConfig& config, const std::string& section, const std::string& key, const std::string& value) {
  if (section == "attributes") {
    const auto bar = value.find('|');
    if (key.empty() || bar == std::string::npos) {
      bad_value(section, key, value, "'positive prompt | negative prompt'");
    }
    PerceptualAttribute attr{key, trim(value.substr(0, bar)), trim(value.substr(bar + 1))};
    auto it = std::find_if(config.attribute_overrides.begin(), config.attribute_overrides.end(),
                           [&](const PerceptualAttribute& a) { return a.name == key; });
    if (it != config.attribute_overrides.end()) {
      *it = attr;
    } else {
      config.attribute_overrides.push_back(attr);
    }
    return;
  }
  bool known_section = false;
  for (const auto& f : fields()) {
    if (section != f.section) continue;
    known_section = true;
    if (key == f.key) {
      try {
        f.set(config, value);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Config) throw;
        throw Error(ErrorKind::Config, "[" + section + "] " + key + ": " + e.what());
      }
      return;
    }
  }
  if (!known_section) throw Error(ErrorKind::Config, "unknown section [" + section + "]");
  throw Error(ErrorKind::Config, "unknown key '" + key + "' in [" + section + "]");
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw Error(ErrorKind::Config, "override '" + assignment + "' must look like section.key=value");
  }
  apply_setting(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
                trim(assignment.substr(eq + 1)));
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  for (const auto& sec : parse_ini(text)) {
    for (const auto& e : sec.entries) {
      try {
        apply_setting(base, sec.name, e.key, e.value);
      } catch (const Error& err) {
        throw Error(ErrorKind::Config, "line " + std::to_string(e.line) + ": " + err.what());
      }
    }
  }
  base.validate();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string to_ini(const RunConfig& c) {
  std::string out;
  for (const char* section : kSectionOrder) {
    out += std::string(out.empty() ? "" : "\n") + "[" + section + "]\n";
    if (std::string(section) == "attributes") {
      for (const auto& a : c.attribute_overrides) out += a.name + " = " + a.positive_prompt + " | " + a.negative_prompt + "\n";
      continue;
    }
    for (const auto& f : fields()) {
      if (std::string(section) == f.section) out += std::string(f.key) + " = " + f.get(c) + "\n";
    }
  }
  return out;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (scale_factor < 1) fail("[run] scale_factor must be >= 1");
  if (!(learning_rate > 0.0)) fail("[run] lr must be > 0");
  if (batch_size < 1) fail("[run] batch_size must be >= 1");
  if (steps < 0) fail("[run] steps must be >= 0");
  if (checkpoint_every < 0) fail("[run] checkpoint_every must be >= 0");
  if (synthetic_pairs < 1) fail("[run] synthetic_pairs must be >= 1");
  if (eval_pairs < 0) fail("[run] eval_pairs must be >= 0");
  try {
    selector.validate();
    loss.validate();
    degrade.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  if (fixed_t && !candidates.contains(*fixed_t)) fail("[dtsm] fixed_t must be one of the candidates");
  if (crop_size < 1 || crop_size % degrade.downscale) fail("[degrade] crop_size must be a positive multiple of downscale");
  if (lora.rank < 1) fail("[lora] rank must be >= 1");
  if (lora.targets.empty()) fail("[lora] targets must name at least one component");
  for (auto t : lora.targets)
    if (t == AdapterTarget::Decoder) fail("[lora] targets: the decoder stays frozen");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    fail("[optim] betas must lie in [0,1)");
  }
  if (!(optim.eps > 0.0)) fail("[optim] eps must be > 0");
  if (!(optim.weight_decay >= 0.0)) fail("[optim] weight_decay must be >= 0");
  if (!(optim.grad_clip >= 0.0)) fail("[optim] grad_clip must be >= 0");
  if (optim.selector_lr && !(*optim.selector_lr > 0.0)) fail("[optim] selector_lr must be > 0");
  if (model.backbone != "toy" && model.backbone != "identity") fail("[model] backbone must be toy or identity");
  if (model.provider != "toy") fail("[model] provider must be toy");
  if (model.perceptual != "toy" && model.perceptual != "identity") fail("[model] perceptual must be toy or identity");
  if (model.provider_dim < 1 || model.provider_resolution < 2 || model.provider_resolution % 2) {
    fail("[model] provider_dim must be >= 1 and provider_resolution even");
  }
  try {
    make_registry(*this);
  } catch (const Error& e) {
    fail(std::string("[attributes] ") + e.what());
  }
}

AttributeRegistry make_registry(const RunConfig& config) {
  std::vector<PerceptualAttribute> attrs = AttributeRegistry::defaults().attributes();
  for (const auto& o : config.attribute_overrides) {
    auto it = std::find_if(attrs.begin(), attrs.end(), [&](const PerceptualAttribute& a) { return a.name == o.name; });
    if (it != attrs.end()) {
      *it = o;
    } else {
      attrs.push_back(o);
    }
  }
  return AttributeRegistry(std::move(attrs));
}

std::vector<AdapterSpec> adapter_specs(const RunConfig& config) {
  std::vector<AdapterSpec> out;
  for (auto t : config.lora.targets) out.push_back({config.lora.rank, t, config.lora.scaling});
  return out;
}

}  // namespace osdsr
