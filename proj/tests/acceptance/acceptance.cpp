// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "osdsr/commands.hpp"
#include "osdsr/dtsm.hpp"
#include "osdsr/evalmetrics.hpp"
#include "osdsr/losses.hpp"
#include "osdsr/owms.hpp"
#include "osdsr/pipeline.hpp"
#include "osdsr/random.hpp"
#include "osdsr/trainer.hpp"

using namespace osdsr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome outcome(bool pass, const char* fmt, ...) __attribute__((format(printf, 2, 3)));
Outcome outcome(bool pass, const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return {pass, buf};
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

ImageBatch random_image(int h, int w, Rng& rng) { return ImageBatch(random_tensor({1, 3, h, w}, rng, 0.02, 0.98)); }

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("osdsr_acceptance_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every regular file under `dir`, keyed by relative path.
std::vector<std::pair<std::string, std::string>> tree(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).string(), slurp(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

double norm_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d2 = 0.0, a2 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d2 += (a[i] - b[i]) * (a[i] - b[i]);
    a2 += a[i] * a[i];
    b2 += b[i] * b[i];
  }
  return std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(b2), 1e-300});
}

// Learning rate for the 200-step smoke run.
constexpr double kSmokeLearningRate = 1e-3;

// Small model used wherever the criterion does not pin the architecture.
RunConfig tiny_config() {
  RunConfig c;
  c.seed = 11;
  c.learning_rate = 1e-3;
  c.crop_size = 16;
  c.synthetic_pairs = 4;
  c.eval_pairs = 2;
  c.checkpoint_every = 0;
  c.lora.rank = 2;
  c.selector.conv_channels = 8;
  c.selector.n_resblocks = 1;
  c.selector.mlp_hidden = 16;
  c.model.toy.encoder_width = 4;
  c.model.toy.unet_width = 8;
  c.model.toy.time_embedding_dim = 8;
  c.model.provider_dim = 16;
  c.model.provider_resolution = 16;
  return c;
}

// ---------------------------------------------------------------- criteria

Outcome gumbel_statistics() {
  const std::vector<double> logits = {2.0, 1.0, 0.0};
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  Rng rng(2024);
  const int n = 10000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(gumbel_softmax_select(logits, 1.0, true, rng).hard_index)];
  double worst = 0.0;
  for (int j = 0; j < 3; ++j) {
    worst = std::max(worst, std::abs(counts[static_cast<std::size_t>(j)] / double(n) - std::exp(logits[static_cast<std::size_t>(j)]) / z));
  }
  return outcome(worst <= 0.02, "max |freq - softmax| = %.4f (tol 0.02)", worst);
}

Outcome straight_through_gradient() {
  const CandidateSet candidates = CandidateSet::uniform_default();
  const TimestepSelector selector(candidates, SelectorConfig{}, 5);
  Rng init(6);
  ag::Var image(random_tensor({1, 3, 8, 8}, init, 0.0, 1.0), true);
  std::vector<double> w(static_cast<std::size_t>(candidates.size()));
  for (double& v : w) v = init.uniform(-1.0, 1.0);
  const Tensor weights({1, candidates.size()}, w);

  // J = <w, one_hot> in value; its straight-through gradient is that of <w, soft>.
  auto objective = [&](bool straight_through) {
    Rng rng(77);
    const BatchSelection sel = select_timestep(image, selector, Mode::Train, &rng);
    const ag::Var y = straight_through ? sel.hard_straight_through() : sel.soft;
    return ag::sum(ag::mul(y, ag::constant(weights)));
  };
  image.zero_grad();
  const ag::Var j = objective(true);
  ag::backward(j);
  const std::vector<double> analytic(image.grad().data().begin(), image.grad().data().end());

  Rng rng(77);
  const int hard = select_timestep(image, selector, Mode::Train, &rng).items[0].hard_index;
  const bool value_ok = j.item() == w[static_cast<std::size_t>(hard)];

  std::vector<double> numeric(analytic.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    double& x = image.mutable_value().data()[i];
    const double x0 = x;
    x = x0 + h;
    const double up = objective(false).item();
    x = x0 - h;
    const double down = objective(false).item();
    x = x0;
    numeric[i] = (up - down) / (2 * h);
  }
  const double err = norm_relative_error(analytic, numeric);
  return outcome(err < 1e-3 && value_ok, "relative error %.2e (tol 1e-3), forward value is the hard pick: %s", err,
                 value_ok ? "yes" : "no");
}

Outcome loss_bounds() {
  const ToyEmbeddingProvider provider(3);
  const AttributeRegistry registry = AttributeRegistry::defaults();
  TextEmbeddingCache cache;
  Rng rng(8);
  double lo = 1.0, hi = 0.0, worst_id = 0.0;
  for (int i = 0; i < 100; ++i) {
    const ImageBatch x = random_image(16 + 2 * (i % 9), 16 + 2 * (i % 5), rng);
    const double td = td_pal_loss(x, registry, provider, &cache);
    lo = std::min(lo, td);
    hi = std::max(hi, td);
    worst_id = std::max(worst_id, id_sal_loss(x, x, provider));
  }
  bool half = true;
  for (double s : {-1.0, -0.3, 0.0, 0.25, 1.0}) half = half && pair_normalize(s, s) == 0.5;
  const double total = total_loss(LossTerms{0.1, 0.2, 0.3, 0.4}, LossWeights{2.0, 5.0, 1.0, 0.5}).total;
  const bool pass = lo > 0.0 && hi < 1.0 && worst_id <= 1e-6 && half && std::abs(total - 1.7) <= 1e-9;
  return outcome(pass, "td_pal in [%.4f, %.4f], max id_sal(x,x) = %.1e, pair_normalize(s,s)=0.5: %s, total = %.12f",
                 lo, hi, worst_id, half ? "yes" : "no", total);
}

Outcome combined_gradient() {
  RunConfig c = tiny_config();
  c.crop_size = 32;  // 8x8 LR input at x4
  TrainModel model = build_model(c);
  // Adapters start neutral with zero gradient on the down factors; move them
  // off zero so every path is exercised.
  Rng rng(12);
  std::vector<ag::Var> leaves;
  for (auto p : adapter_parameters(model.bundle)) {
    for (double& v : p.var.mutable_value().data()) v = rng.uniform(-0.05, 0.05);
    leaves.push_back(p.var);
  }
  const PairSample batch = make_synthetic_pairs(1, 32, c.degrade, 4)[0];
  auto f = [&] { return training_objective(model, batch, c, {}, 0); };

  for (auto& l : leaves) l.zero_grad();
  const Objective obj = f();
  ag::backward(obj.total);
  const bool all_terms = obj.report.mse > 0 && obj.report.perceptual > 0 && obj.report.td_pal > 0 && obj.report.id_sal > 0;
  std::vector<double> analytic, numeric;
  const double h = 1e-6;
  for (auto& l : leaves) {
    for (std::size_t i = 0; i < l.value().numel(); ++i) {
      analytic.push_back(l.has_grad() ? l.grad().data()[i] : 0.0);
      double& x = l.mutable_value().data()[i];
      const double x0 = x;
      x = x0 + h;
      const double up = f().total.item();
      x = x0 - h;
      const double down = f().total.item();
      x = x0;
      numeric.push_back((up - down) / (2 * h));
    }
  }
  const double err = norm_relative_error(analytic, numeric);
  return outcome(err < 1e-3 && all_terms, "relative error %.2e over %zu adapter weights (tol 1e-3), all terms active: %s",
                 err, analytic.size(), all_terms ? "yes" : "no");
}

Outcome one_step_and_freezing() {
  RunConfig c = tiny_config();
  TrainModel model = build_model(c);
  Rng rng(3);
  const ImageBatch lr = ImageBatch(random_tensor({2, 3, 4, 4}, rng, 0.0, 1.0));
  model.bundle.unet().reset_evaluations();
  super_resolve(model.bundle, model.schedule, model.selector, lr, c.scale_factor, Mode::Infer);
  const std::size_t evals = model.bundle.unet().evaluations();

  auto frozen_checksum = [&] {
    nn::ParameterList frozen = model.bundle.decoder_parameters();
    for (const auto& p : model.provider->parameters()) frozen.push_back(p);
    return nn::checksum(frozen);
  };
  const auto before = frozen_checksum();
  TrainState state = init_state(model, c);
  const auto pairs = training_pairs(c);
  for (long k = 0; k < 100; ++k) train_step(state, model, batch_for_step(pairs, k, c.batch_size, c.seed), c, {});
  const bool frozen_ok = frozen_checksum() == before;
  const bool adapters_moved = nn::checksum(adapter_parameters(model.bundle)) != nn::checksum(adapter_parameters(build_model(c).bundle));

  const BackboneBundle base = make_toy_backbone(c.model.model_seed, c.model.toy);
  const BackboneBundle adapted = apply_adapters(base, default_adapter_specs(4), 99);
  const TimestepSelector selector(c.candidates, c.selector, 1);
  double diff = 0.0;
  for (int t : c.candidates.steps()) {
    const auto a = super_resolve(base, model.schedule, selector, lr, c.scale_factor, Mode::Infer, nullptr, t);
    const auto b = super_resolve(adapted, model.schedule, selector, lr, c.scale_factor, Mode::Infer, nullptr, t);
    for (std::size_t i = 0; i < a.image.tensor().numel(); ++i) {
      diff = std::max(diff, std::abs(a.image.tensor().data()[i] - b.image.tensor().data()[i]));
    }
  }
  return outcome(evals == 1 && frozen_ok && adapters_moved && diff == 0.0,
                 "U-Net evaluations per call = %zu, decoder/provider unchanged after 100 steps: %s (adapters moved: "
                 "%s), zero-init adapter max diff = %g",
                 evals, frozen_ok ? "yes" : "no", adapters_moved ? "yes" : "no", diff);
}

Outcome x0_recovery() {
  const DiffusionSchedule schedule = default_schedule();
  Rng rng(21);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
    const double a = alpha_bar_at(schedule, t);
    const Tensor z = random_tensor({1, 4, 4, 4}, rng, -3.0, 3.0);
    const Tensor eps = random_tensor({1, 4, 4, 4}, rng, -3.0, 3.0);
    const Tensor z_sr = recover_clean_latent(z, eps, a);
    for (std::size_t j = 0; j < z.numel(); ++j) {
      const double renoised = std::sqrt(a) * z_sr.data()[j] + std::sqrt(1.0 - a) * eps.data()[j];
      worst = std::max(worst, std::abs(renoised - z.data()[j]));
    }
  }
  return outcome(worst <= 1e-5, "max |renoise(z_SR) - z| = %.2e (tol 1e-5)", worst);
}

Outcome training_smoke() {
  RunConfig c;
  c.seed = 0;
  c.synthetic_pairs = 16;
  c.crop_size = 64;
  c.steps = 200;
  c.checkpoint_every = 0;
  c.learning_rate = kSmokeLearningRate;
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = fresh_dir("smoke");
  const TrainResult r = run_training(c, {}, training_pairs(c), out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += r.history[static_cast<std::size_t>(i)].total / 10.0;
    last += r.history[r.history.size() - 10 + static_cast<std::size_t>(i)].total / 10.0;
  }
  const double drop = 1.0 - last / first;
  fs::remove_all(out);
  return outcome(drop >= 0.30 && secs < 300.0, "mean total %.5f -> %.5f (drop %.1f%%, need 30%%), %.1f s", first, last,
                 100.0 * drop, secs);
}

// Direct loop implementations, independent of evalmetrics internals.
double oracle_y(const ImageBatch& im, int y, int x) {
  const Tensor& t = im.tensor();
  const int h = im.height(), w = im.width();
  auto at = [&](int c) { return t.data()[(static_cast<std::size_t>(c) * h + y) * w + x]; };
  return 0.299 * at(0) + 0.587 * at(1) + 0.114 * at(2);
}

double oracle_psnr(const ImageBatch& a, const ImageBatch& b) {
  double se = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) se += std::pow(oracle_y(a, y, x) - oracle_y(b, y, x), 2);
  const double mse = se / (a.height() * a.width());
  return mse == 0.0 ? 100.0 : std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double oracle_ssim(const ImageBatch& a, const ImageBatch& b) {
  double g[11], gs = 0.0;
  for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
  double total = 0.0;
  int n = 0;
  for (int y = 0; y + 11 <= a.height(); ++y) {
    for (int x = 0; x + 11 <= a.width(); ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i] * g[j] / (gs * gs);
          const double pa = oracle_y(a, y + i, x + j), pb = oracle_y(b, y + i, x + j);
          ma += wt * pa;
          mb += wt * pb;
          saa += wt * pa * pa;
          sbb += wt * pb * pb;
          sab += wt * pa * pb;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      const double c1 = 1e-4, c2 = 9e-4;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  }
  return total / n;
}

Outcome metric_oracles() {
  Rng rng(31);
  double dp = 0.0, ds = 0.0;
  bool self_one = true;
  for (int i = 0; i < 10; ++i) {
    const ImageBatch a = random_image(32, 32, rng);
    const ImageBatch b = random_image(32, 32, rng);
    dp = std::max(dp, std::abs(psnr_y(a, b) - oracle_psnr(a, b)));
    ds = std::max(ds, std::abs(ssim_y(a, b) - oracle_ssim(a, b)));
    self_one = self_one && ssim_y(a, a) == 1.0;
  }
  const ImageBatch base = ImageBatch(random_tensor({1, 3, 24, 24}, rng, 0.1, 0.8));
  Tensor shifted = base.tensor();
  for (double& v : shifted.data()) v += 0.1;
  const double p20 = psnr_y(ImageBatch(shifted), base);
  const bool pass = dp <= 1e-6 && ds <= 1e-4 && self_one && std::abs(p20 - 20.0) <= 1e-9;
  return outcome(pass, "max psnr diff %.1e dB, max ssim diff %.1e, ssim(a,a)=1: %s, offset 0.1 -> %.12f dB", dp, ds,
                 self_one ? "yes" : "no", p20);
}

Outcome determinism() {
  RunConfig c = tiny_config();
  c.steps = 6;
  c.checkpoint_every = 3;
  const fs::path gt = fresh_dir("gt");
  write_synthetic_dataset(gt, 3, 40, 5);
  std::ostringstream log, err;
  const fs::path d1 = fresh_dir("deg1"), d2 = fresh_dir("deg2");
  const int rc = cmd_degrade(gt, c, d1, log, err) | cmd_degrade(gt, c, d2, log, err);
  const auto t1 = tree(d1), t2 = tree(d2);
  const bool degrade_same = rc == 0 && t1 == t2 && t1.size() == 7;

  const fs::path r1 = fresh_dir("run1"), r2 = fresh_dir("run2");
  const auto pairs = training_pairs(c);
  run_training(c, {}, pairs, r1);
  run_training(c, {}, pairs, r2);
  const auto u1 = tree(r1), u2 = tree(r2);
  const bool train_same = u1 == u2 && !u1.empty();
  for (const auto& d : {gt, d1, d2, r1, r2}) fs::remove_all(d);
  return outcome(degrade_same && train_same, "degrade outputs identical: %s (%zu files), training outputs identical: %s (%zu files)",
                 degrade_same ? "yes" : "no", t1.size(), train_same ? "yes" : "no", u1.size());
}

Outcome ablation_structure() {
  RunConfig c = tiny_config();
  c.steps = 2;
  const auto pairs = training_pairs(c);
  const auto eval = held_out_pairs(c);
  const AttributeRegistry registry = make_registry(c);

  auto check = [&](const std::vector<AblationSpec>& variants, const fs::path& out,
                   const std::vector<std::vector<int>>& expected) {
    const AblationTable table = run_ablation_suite(c, variants, pairs, eval, out);
    std::istringstream csv(format_ablation_csv(table));
    std::string line;
    std::getline(csv, line);
    std::string header = "variant,dtsm,id_sal,td_pal";
    for (const auto& a : registry.attributes()) header += "," + a.name;
    if (line != header + ",psnr_y,ssim_y,perceptual,final_total,status") return false;
    for (const auto& flags : expected) {
      if (!std::getline(csv, line)) return false;
      std::vector<std::string> cells;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
      if (cells.size() != 1 + flags.size() + 5 || cells.back() != "ok") return false;
      for (std::size_t i = 0; i < flags.size(); ++i)
        if (cells[i + 1] != std::to_string(flags[i])) return false;
    }
    return !std::getline(csv, line) && fs::exists(out / "ablation.csv");
  };

  std::vector<std::vector<int>> comps = {{0, 1, 1}, {1, 0, 1}, {1, 1, 0}, {1, 1, 1}};
  for (auto& row : comps) row.insert(row.end(), 6, 1);
  std::vector<std::vector<int>> attrs;
  for (int i = 0; i <= 6; ++i) {
    std::vector<int> row(9, 1);
    if (i < 6) row[static_cast<std::size_t>(3 + i)] = 0;
    attrs.push_back(row);
  }
  const fs::path o1 = fresh_dir("abl_components"), o2 = fresh_dir("abl_attributes");
  const bool ok1 = check(component_ablation_variants(), o1, comps);
  const bool ok2 = check(attribute_ablation_variants(registry), o2, attrs);
  fs::remove_all(o1);
  fs::remove_all(o2);
  return outcome(ok1 && ok2, "4-variant component table: %s, 7-variant attribute table: %s", ok1 ? "ok" : "wrong",
                 ok2 ? "ok" : "wrong");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"Gumbel-softmax statistics", gumbel_statistics},
      {"straight-through gradient", straight_through_gradient},
      {"loss bounds and identities", loss_bounds},
      {"combined-objective gradient", combined_gradient},
      {"one-step and freezing contracts", one_step_and_freezing},
      {"x0 recovery", x0_recovery},
      {"training smoke regression", training_smoke},
      {"metric oracle equivalence", metric_oracles},
      {"determinism", determinism},
      {"ablation harness structure", ablation_structure},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %2zu %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
