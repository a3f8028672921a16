#include "qkf/config.hpp"

#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "json.hpp"

using namespace qkf;

namespace {

std::string write_temp_config(const std::string& body) {
  const std::string path = "/tmp/qkf_test_config_" + std::to_string(::getpid()) + ".json";
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("defaults match the documented inference settings") {
  const PipelineConfig cfg = load_config(std::nullopt, {});
  CHECK(cfg.k == 20);
  CHECK(cfg.alpha == 0.9);
  CHECK(cfg.tau == 0.07);
  CHECK(cfg.chunk_len == 512);
  CHECK(cfg.theta == 0.02);
  CHECK(cfg.top_u == 3);
  CHECK(cfg.lambda == 0.2);
  CHECK(cfg.quota_first == 3);
  CHECK(cfg.quota_rest == 1);
  CHECK(cfg.qff_num_queries == 8);
  CHECK(cfg.qff_dim == 32);
  CHECK(cfg.qff_vocab == 4096);
  CHECK(cfg.template_id == "evqa");
  CHECK(cfg.workers == 1);
}

TEST_CASE("flags beat the config file which beats the defaults") {
  const std::string path = write_temp_config(R"({"alpha": 0.7, "k": 11})");
  FlagOverrides flags;
  flags.alpha = 0.5;
  std::vector<std::string> log;
  const PipelineConfig cfg = load_config(path, flags, &log);
  CHECK(cfg.alpha == 0.5);  // flag wins
  CHECK(cfg.k == 11);       // file wins over default
  CHECK(cfg.tau == 0.07);   // untouched default
  bool saw_flag = false, saw_file = false;
  for (const auto& line : log) {
    if (line.find("--alpha") != std::string::npos) saw_flag = true;
    if (line.find("config file: k") != std::string::npos) saw_file = true;
  }
  CHECK(saw_flag);
  CHECK(saw_file);
  std::remove(path.c_str());
}

TEST_CASE("constraint violations name the offending field") {
  const std::string path = write_temp_config(R"({"k1": 1, "k2": 3})");
  CHECK_THROWS_WITH_AS(load_config(path, {}), doctest::Contains("k1"), std::invalid_argument);
  std::remove(path.c_str());

  FlagOverrides bad_theta;
  bad_theta.theta = -1.0;
  CHECK_THROWS_WITH_AS(load_config(std::nullopt, bad_theta), doctest::Contains("theta"),
                       std::invalid_argument);

  FlagOverrides bad_alpha;
  bad_alpha.alpha = 1.5;
  CHECK_THROWS_AS(load_config(std::nullopt, bad_alpha), std::invalid_argument);
}

TEST_CASE("unknown config keys are rejected") {
  const std::string path = write_temp_config(R"({"alhpa": 0.7})");
  CHECK_THROWS_WITH_AS(load_config(path, {}), doctest::Contains("alhpa"),
                       std::invalid_argument);
  std::remove(path.c_str());
}

TEST_CASE("missing config file is a startup error") {
  CHECK_THROWS_AS(load_config(std::string("/nonexistent/qkf.json"), {}), std::runtime_error);
}

TEST_CASE("QKF_ENDPOINT fills in when no endpoint is given") {
  ::setenv("QKF_ENDPOINT", "http://env-host:9999", 1);
  FlagOverrides flags;
  flags.provider_kind = "http";
  const PipelineConfig cfg = load_config(std::nullopt, flags);
  CHECK(cfg.provider.endpoint == "http://env-host:9999");

  FlagOverrides with_flag = flags;
  with_flag.endpoint = "http://flag-host:1111";
  CHECK(load_config(std::nullopt, with_flag).provider.endpoint == "http://flag-host:1111");
  ::unsetenv("QKF_ENDPOINT");
}

TEST_CASE("seed flows into the provider and the config json") {
  FlagOverrides flags;
  flags.seed = 99;
  const PipelineConfig cfg = load_config(std::nullopt, flags);
  CHECK(cfg.provider.seed == 99);
  const auto j = nlohmann::json::parse(cfg.to_json_string());
  CHECK(j["seed"] == 99);
  CHECK(j["alpha"] == 0.9);
}
