#include "doctest.h"
#include "osdsr/config.hpp"
#include "osdsr/error.hpp"

using namespace osdsr;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.scale_factor == 4);
  CHECK(c.learning_rate == 5e-5);
  CHECK(c.batch_size == 2);
  CHECK(c.lora.rank == 16);
  CHECK(c.dtsm_fallback_t() == 999);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("parse sections and keys") {
  const auto c = parse_run_config(R"(
# comment
[run]
seed = 42
lr = 1e-3
[dtsm]
candidates = 99, 499, 999
temperature = 0.5
fixed_t = 499
[loss]
lambda3 = 0
[attributes]
Noise = Clean photo | Grainy photo
Colour = Vivid colours | Washed-out colours
[degrade]
jpeg_quality = none
)");
  CHECK(c.seed == 42);
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.candidates.steps() == std::vector<int>{99, 499, 999});
  CHECK(c.dtsm_fallback_t() == 499);
  CHECK(c.loss.lambda3 == 0.0);
  CHECK_FALSE(c.degrade.jpeg_quality.has_value());
  const auto reg = make_registry(c);
  CHECK(reg.size() == 7);
  CHECK(reg.attributes()[4].positive_prompt == "Clean photo");
  CHECK(reg.attributes()[6].name == "Colour");
}

TEST_CASE("unknown keys and sections are named") {
  CHECK(error_of([] { parse_run_config("[run]\nsed = 1\n"); }).find("'sed'") != std::string::npos);
  CHECK(error_of([] { parse_run_config("[runn]\nseed = 1\n"); }).find("[runn]") != std::string::npos);
  CHECK(error_of([] { parse_run_config("seed = 1\n"); }).find("outside") != std::string::npos);
  CHECK(error_of([] { parse_run_config("[run]\nseed = x\n"); }).find("seed") != std::string::npos);
  CHECK(error_of([] { parse_run_config("[run]\nlr = 0\n"); }).find("lr") != std::string::npos);
  CHECK(error_of([] { parse_run_config("[attributes]\nNoise = only one\n"); }).find("Noise") != std::string::npos);
  CHECK(error_of([] { parse_run_config("[lora]\ntargets = decoder\n"); }).find("decoder") != std::string::npos);
  CHECK(error_of([] { parse_run_config("[dtsm]\nfixed_t = 5\n"); }).find("fixed_t") != std::string::npos);
}

TEST_CASE("snapshot round trip") {
  RunConfig c;
  apply_override(c, "run.seed=9");
  apply_override(c, "optim.selector_lr=1e-4");
  apply_override(c, "attributes.Quality=Great | Awful");
  apply_override(c, "lora.targets=unet");
  const std::string ini = to_ini(c);
  const RunConfig back = parse_run_config(ini);
  CHECK(to_ini(back) == ini);
  CHECK(back.seed == 9);
  CHECK(*back.optim.selector_lr == 1e-4);
  CHECK(back.lora.targets.size() == 1);
  CHECK(ini.find("[paths]") != std::string::npos);
  CHECK_THROWS_AS(apply_override(c, "seed=3"), Error);
}

TEST_CASE("INI parser") {
  const auto secs = parse_ini("[a]\nx = 1\n; note\n[b c]\ny=2 = 3\n");
  REQUIRE(secs.size() == 2);
  CHECK(secs[1].name == "b c");
  CHECK(secs[1].entries[0].key == "y");
  CHECK(secs[1].entries[0].value == "2 = 3");
  CHECK_THROWS_AS(parse_ini("[a\n"), Error);
  CHECK_THROWS_AS(parse_ini("[a]\nnovalue\n"), Error);
}
