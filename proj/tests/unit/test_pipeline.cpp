#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "osdsr/error.hpp"
#include "osdsr/pipeline.hpp"

using namespace osdsr;
namespace fs = std::filesystem;

TEST_CASE("sinusoidal time embedding") {
  const auto e = timestep_embedding(0, 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(e[i] == 0.0);
    CHECK(e[i + 4] == 1.0);
  }
  const auto f = timestep_embedding(7, 4);
  CHECK(f[0] == doctest::Approx(std::sin(7.0)));
  CHECK(f[1] == doctest::Approx(std::sin(7.0 / 100.0)));
  CHECK(f[3] == doctest::Approx(std::cos(7.0 / 100.0)));
  CHECK_THROWS_AS(timestep_embedding(1, 3), Error);
}

TEST_CASE("time condition carries the hard candidate's values") {
  const auto sched = default_schedule();
  const auto cands = CandidateSet::uniform_default();
  const auto sel = fixed_selection(cands, 599, 2);
  const auto cond = make_time_condition(sched, cands, sel, 16);
  const auto e = timestep_embedding(599, 16);
  for (int b = 0; b < 2; ++b) {
    CHECK(cond.alpha_bar.value()[b] == alpha_bar_at(sched, 599));
    for (int i = 0; i < 16; ++i) CHECK(cond.embedding.value()[b * 16 + i] == e[i]);
  }
}

TEST_CASE("x0 recovery inverts the forward noising relation") {
  Rng rng(3);
  const auto sched = default_schedule();
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = testing::random_tensor({1, 4, 3, 3}, 100 + trial, -3, 3);
    const Tensor eps = testing::random_tensor({1, 4, 3, 3}, 500 + trial, -3, 3);
    const double a = alpha_bar_at(sched, static_cast<int>(rng.below(1000)));
    const Tensor z0 = recover_clean_latent(z, eps, a);
    for (std::size_t i = 0; i < z.numel(); ++i) {
      CHECK(std::abs(std::sqrt(a) * z0[i] + std::sqrt(1 - a) * eps[i] - z[i]) < 1e-9);
    }
  }
  CHECK_THROWS_AS(recover_clean_latent(Tensor({1}), Tensor({1}), 0.0), Error);
}

TEST_CASE("toy backbone: shapes, frozen parameters, one evaluation per call") {
  auto bb = make_toy_backbone(1);
  CHECK(bb.latent_factor() == 4);
  const auto img = testing::random_image(2, 16, 16, 4);
  const auto z = encode(bb, img);
  CHECK(z.tensor().shape() == Shape{2, 4, 4, 4});
  CHECK(decode(bb, z).tensor().shape() == img.tensor().shape());
  for (const auto& p : bb.parameters()) CHECK_FALSE(p.var.requires_grad());
  CHECK_THROWS_AS(encode(bb, testing::random_image(1, 10, 16, 4)), Error);

  TimestepSelector sel(CandidateSet::uniform_default(), SelectorConfig{}, 2);
  bb.unet().reset_evaluations();
  super_resolve(bb, default_schedule(), sel, testing::random_image(1, 4, 4, 5), 4, Mode::Infer);
  CHECK(bb.unet().evaluations() == 1);
}

TEST_CASE("identity prior makes the untrained denoiser an identity on latents") {
  const auto bb = make_toy_backbone(2);
  const auto sched = default_schedule();
  const auto cands = CandidateSet::uniform_default();
  const auto z = encode(bb, testing::random_image(1, 16, 16, 6));
  for (int t : cands.steps()) {
    const auto sel = fixed_selection(cands, t, 1);
    const auto zs = denoise_one_step(bb, sched, cands, z, sel.items);
    for (std::size_t i = 0; i < z.tensor().numel(); ++i) CHECK(zs.tensor()[i] == doctest::Approx(z.tensor()[i]).epsilon(1e-9));
  }
}

TEST_CASE("zero noise prediction divides by sqrt(alpha_bar)") {
  const auto bb = make_identity_backbone(false);
  const auto sched = default_schedule();
  const auto cands = CandidateSet::uniform_default();
  const auto z = LatentBatch(testing::random_tensor({1, 3, 4, 4}, 7));
  const auto sel = fixed_selection(cands, 399, 1);
  const auto zs = denoise_one_step(bb, sched, cands, z, sel.items);
  const double a = alpha_bar_at(sched, 399);
  for (std::size_t i = 0; i < z.tensor().numel(); ++i) CHECK(zs.tensor()[i] == doctest::Approx(z.tensor()[i] / std::sqrt(a)));
}

TEST_CASE("adapters: output-neutral at init, decoder rejected, base stays frozen") {
  const auto bb = make_toy_backbone(3);
  const auto ad = apply_adapters(bb, default_adapter_specs(), 9);
  TimestepSelector sel(CandidateSet::uniform_default(), SelectorConfig{}, 2);
  const auto lr = testing::random_image(1, 8, 8, 8);
  const auto a = super_resolve(bb, default_schedule(), sel, lr, 4, Mode::Infer);
  const auto b = super_resolve(ad, default_schedule(), sel, lr, 4, Mode::Infer);
  CHECK(a.image.tensor().vec() == b.image.tensor().vec());
  CHECK_FALSE(adapter_parameters(ad).empty());
  for (const auto& p : nn::trainable_only(ad.parameters())) {
    const bool is_adapter = p.name.ends_with(".lora_down") || p.name.ends_with(".lora_up");
    CHECK(is_adapter);
  }
  CHECK(adapter_parameters(bb).empty());
  CHECK_THROWS_AS(apply_adapters(bb, {{4, AdapterTarget::Decoder, 1.0}}, 1), Error);
  CHECK_THROWS_AS(parse_adapter_target("vae"), Error);
}

TEST_CASE("bicubic pre-upsampling") {
  const auto img = testing::random_image(1, 5, 6, 10);
  CHECK(pre_upsample(img, 1).tensor().vec() == img.tensor().vec());
  const auto up = pre_upsample(ImageBatch::filled(1, 3, 3, 0.4), 4);
  CHECK(up.height() == 12);
  for (double v : up.tensor().data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));
  CHECK_THROWS_AS(pre_upsample(img, 0), Error);
}

TEST_CASE("schedule descriptor round trip") {
  const auto s = make_schedule(500, 2e-4, 0.03);
  const auto d = describe_schedule(s);
  CHECK(d.rfind("linear T=500", 0) == 0);
  CHECK(parse_schedule(d).alpha_bars == s.alpha_bars);
  CHECK_THROWS_AS(parse_schedule("cosine T=10"), Error);
}

TEST_CASE("checkpoint round trip restores adapters and selector") {
  const fs::path dir = fs::temp_directory_path() / "osdsr_ckpt_test";
  fs::remove_all(dir);
  auto bb = apply_adapters(make_toy_backbone(4), default_adapter_specs(4), 1);
  TimestepSelector sel(CandidateSet::uniform_default(), SelectorConfig{}, 3);
  for (auto& p : adapter_parameters(bb)) p.var.mutable_value().fill(0.25);
  save_checkpoint(dir, bb, sel, "[run]\nseed = 1\n", default_schedule());
  CHECK(fs::exists(dir / "params.bin"));
  CHECK(fs::exists(dir / "config.ini"));
  CHECK(fs::exists(dir / "schedule.txt"));

  auto bb2 = apply_adapters(make_toy_backbone(4), default_adapter_specs(4), 1);
  TimestepSelector sel2(CandidateSet::uniform_default(), SelectorConfig{}, 77);
  load_checkpoint_parameters(dir, bb2, sel2);
  CHECK(nn::checksum(adapter_parameters(bb2)) == nn::checksum(adapter_parameters(bb)));
  CHECK(nn::checksum(sel2.parameters()) == nn::checksum(sel.parameters()));

  auto wrong = apply_adapters(make_toy_backbone(4), default_adapter_specs(8), 1);
  CHECK_THROWS_AS(load_checkpoint_parameters(dir, wrong, sel2), Error);
  fs::remove_all(dir);
}

TEST_CASE("backbone copies are deep") {
  auto a = make_toy_backbone(5);
  BackboneBundle b = a;
  b.parameters().front().var.mutable_value()[0] += 1.0;
  CHECK(a.parameters().front().var.value()[0] != b.parameters().front().var.value()[0]);
}
