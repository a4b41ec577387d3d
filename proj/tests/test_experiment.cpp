// Copyright 2026 The ulie Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch_amalgamated.hpp>

#include "ulie/experiment.hpp"

namespace ulie::experiment {
namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ulie_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

Json small_operator_doc() {
  return Json{{"schema_version", 1},      {"dimensions", {3}},       {"train_examples", 1000},
              {"val_examples", 100},      {"test_examples", 100},    {"validate_every", 10},
              {"learning_rate", 0.01}};
}

TEST_CASE("config parsing", "[experiment]") {
  const ExperimentConfig base = defaults(Kind::LearnUnitary, Profile::Desk);
  SECTION("overrides apply") {
    const ExperimentConfig c = apply_json(
        base, Json{{"schema_version", 1},
                   {"dimensions", {2, 5}},
                   {"approaches", {"lie", "projection"}},
                   {"methods", {"lie", "composition"}},
                   {"noise_sigma", 0.02},
                   {"validate_every", 7}});
    CHECK(c.dimensions == std::vector<int>{2, 5});
    CHECK(c.approaches.size() == 2);
    CHECK(c.approaches[1] == ParametrizationKind::Projection);
    CHECK(c.methods[1] == GroundTruthMethod::Composition);
    CHECK(c.noise_sigma == 0.02);
    CHECK(c.validate_every == 7);
  }
  SECTION("rejections") {
    CHECK_THROWS_AS(apply_json(base, Json{{"dimensions", {3}}}), ConfigError);
    CHECK_THROWS_AS(apply_json(base, Json{{"schema_version", 2}}), ConfigError);
    CHECK_THROWS_AS(apply_json(base, Json{{"schema_version", 1}, {"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(apply_json(base, Json{{"schema_version", 1}, {"batch_size", 2.5}}),
                    ConfigError);
    CHECK_THROWS_AS(apply_json(base, Json{{"schema_version", 1}, {"approaches", {"qr"}}}),
                    ConfigError);
    CHECK_THROWS_AS(apply_json(base, Json{{"schema_version", 1}, {"dimensions", Json::array()}}),
                    ConfigError);
    CHECK_THROWS_AS(apply_json(base, Json::array()), ConfigError);
  }
  SECTION("round trip through to_json") {
    const Json doc = Json::parse(to_json(base).dump());
    Json overlay = doc;
    overlay.erase("experiment");
    overlay.erase("profile");
    const ExperimentConfig back = apply_json(base, overlay);
    CHECK(to_json(back) == to_json(base));
  }
}

TEST_CASE("profiles and experiment defaults", "[experiment]") {
  const ExperimentConfig desk = defaults(Kind::LearnUnitary, Profile::Desk);
  const ExperimentConfig paper = defaults(Kind::LearnUnitary, Profile::Paper);
  CHECK(desk.train_examples == 100'000);
  CHECK(desk.val_examples == 10'000);
  CHECK(paper.train_examples == 1'000'000);
  CHECK(paper.test_examples == 100'000);
  const ExperimentConfig r = defaults(Kind::Restricted, Profile::Desk);
  CHECK(r.dimensions == std::vector<int>{8});
  CHECK(r.restrictions.size() == 2);
  const ExperimentConfig s = defaults(Kind::BasisSweep, Profile::Desk);
  const std::vector<double> grid = s.sweep_learning_rates();
  REQUIRE(grid.size() == 4);
  CHECK(grid[0] == 1e-3);
  CHECK(grid[1] == Catch::Approx(8e-5));
  CHECK(grid[3] == Catch::Approx(5e-6));
  CHECK(parse_kind("rnn-memory") == Kind::RnnMemory);
  CHECK_THROWS_AS(parse_kind("nope"), ConfigError);
  CHECK_THROWS_AS(parse_profile("laptop"), ConfigError);
}

TEST_CASE("job expansion and replicate seeding", "[experiment]") {
  const ExperimentConfig lu = defaults(Kind::LearnUnitary, Profile::Desk);
  const auto jobs = operator_jobs(lu, 11, 2);
  REQUIRE(jobs.size() == 6);
  // Same operator and data across approaches, fresh ones across replicates.
  CHECK(jobs[0].seed == jobs[1].seed);
  CHECK(jobs[0].seed == jobs[2].seed);
  CHECK(jobs[0].seed != jobs[3].seed);
  CHECK(jobs[3].replicate == 1);
  CHECK(operator_jobs(lu, 12, 2)[0].seed != jobs[0].seed);

  const auto restricted = operator_jobs(defaults(Kind::Restricted, Profile::Desk), 0, 1);
  REQUIRE(restricted.size() == 3);
  CHECK(restricted[0].restriction == Restriction::None);
  CHECK(restricted[1].restriction == Restriction::SevenN);
  CHECK(restricted[2].approach == ParametrizationKind::Composition);

  const auto sweep = operator_jobs(defaults(Kind::BasisSweep, Profile::Desk), 0, 1);
  REQUIRE(sweep.size() == 13);
  CHECK_FALSE(sweep[0].change_of_basis_c.has_value());
  CHECK(*sweep[1].change_of_basis_c == 5.0);
  CHECK(sweep[12].learning_rate == Catch::Approx(5e-6));

  ExperimentConfig bad = lu;
  bad.batch_size = 0;
  CHECK_THROWS_AS(operator_jobs(bad, 0, 1), PreconditionError);

  const auto rj = rnn_jobs(defaults(Kind::RnnAdding, Profile::Desk), 5, 2);
  REQUIRE(rj.size() == 4);
  CHECK(rj[0].beta == 1.4);
  CHECK(rj[1].beta == 1.0);
  CHECK(rj[0].seed == rj[1].seed);
  CHECK(rj[0].seed != rj[2].seed);
}

TEST_CASE("provenance helpers", "[experiment]") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  TaskConfig a;
  TaskConfig b = a;
  CHECK(config_hash(a) == config_hash(b));
  b.learning_rate = 2e-3;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.replicate = 3;  // the seed, not the label, determines the run
  CHECK(config_hash(a) == config_hash(b));
  for (const double v : {0.1, 1e-3, 2e-3 / 400.0, 6.02e23, -0.0, 1.0 / 3.0}) {
    CHECK(std::stod(format_number(v)) == v);
  }
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(Json::parse(error_record("config", "bad \"key\"", 2))["error"]["exit_code"] == 2);
}

TEST_CASE("trend and curve analysis", "[experiment]") {
  auto trace = [](std::vector<double> losses) {
    std::vector<TracePoint> t;
    for (std::size_t k = 0; k < losses.size(); ++k)
      t.push_back({static_cast<long>(k), losses[k], 0.0});
    return t;
  };
  std::vector<double> decaying;
  for (int k = 0; k < 20; ++k) decaying.push_back(std::exp(-0.3 * k));
  CHECK(trending_down(trace(decaying)));
  CHECK(window_means(trace(decaying), 5).size() == 4);

  std::vector<double> flat(20, 1.0);
  CHECK_FALSE(trending_down(trace(flat)));

  std::vector<double> bounce = decaying;
  for (int k = 10; k < 15; ++k) bounce[static_cast<std::size_t>(k)] = 2.0;
  CHECK_FALSE(trending_down(trace(bounce)));

  std::vector<double> blown = decaying;
  blown.back() = std::numeric_limits<double>::infinity();
  CHECK_FALSE(trending_down(trace(blown)));
  CHECK_FALSE(trending_down(trace({1.0, 0.1})));

  const std::vector<rnn::CurvePoint> curve{{100, 0.3}, {200, 0.2}, {300, 0.1}, {400, 0.15}};
  CHECK(first_crossing(curve, 0.18) == 300);
  CHECK_FALSE(first_crossing(curve, 0.05).has_value());
  CHECK(tail_mean(curve, 0.5) == Catch::Approx(0.125));
  CHECK(tail_mean(curve) == Catch::Approx(0.15));
}

TEST_CASE("parallel_for visits every job once", "[experiment]") {
  for (const int workers : {1, 3}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h == 1);
  }
}

TEST_CASE("svg plot", "[experiment]") {
  const std::string svg =
      svg_plot("t", {{"a", {{0, 1.0}, {1, 0.5}}}, {"b", {{0, 2.0}, {1, 1.0}}}}, 0.7);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("stroke-dasharray") != std::string::npos);
}

TEST_CASE("end-to-end operator run writes reproducible outputs", "[experiment]") {
  const auto root = scratch_dir("run");
  std::filesystem::create_directories(root);
  const auto cfg_path = root / "cfg.json";
  std::ofstream(cfg_path) << small_operator_doc().dump();

  RunManifest m;
  m.kind = Kind::LearnUnitary;
  m.config_path = cfg_path;
  m.out_root = root / "out";
  m.replicates = 2;
  m.seed = 9;
  m.svg = true;
  const RunOutcome a = run(m);
  m.workers = 3;
  const RunOutcome b = run(m);
  CHECK(a.exit_code == kExitOk);
  CHECK(a.dir != b.dir);
  for (const char* f : {"results.csv", "validation.csv", "summary.json", "config.json"})
    CHECK(std::filesystem::exists(a.dir / f));
  CHECK(std::filesystem::exists(a.dir / "validation_n3.svg"));

  const auto rows = read_lines(a.dir / "results.csv");
  REQUIRE(rows.size() == 1 + 2 * 3 * 3);
  CHECK(rows[0] == Writer::kResultHeader);
  const auto val = read_lines(a.dir / "validation.csv");
  CHECK(val.size() == 1 + 2 * 3 * 6);

  const Json sa = Json::parse(std::ifstream(a.dir / "summary.json"));
  const Json sb = Json::parse(std::ifstream(b.dir / "summary.json"));
  REQUIRE(sa["cells"].size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(sa["cells"][k]["test_loss"]["mean"] == sb["cells"][k]["test_loss"]["mean"]);
    CHECK(sa["cells"][k]["test_loss"]["count"] == 2);
    CHECK(sa["cells"][k]["replicates"][0]["config_hash"] ==
          sb["cells"][k]["replicates"][0]["config_hash"]);
  }
  CHECK(sa["config_hash"] == sb["config_hash"]);

  m.config_path = root / "missing.json";
  CHECK_THROWS_AS(run(m), ConfigError);
  std::filesystem::remove_all(root);
}

TEST_CASE("divergence propagates to the exit code", "[experiment]") {
  const auto root = scratch_dir("diverge");
  std::filesystem::create_directories(root);
  Json doc = small_operator_doc();
  doc["divergence_threshold"] = 1e-3;
  doc["approaches"] = {"lie"};
  std::ofstream(root / "cfg.json") << doc.dump();
  RunManifest m;
  m.config_path = root / "cfg.json";
  m.out_root = root / "out";
  m.replicates = 1;
  const RunOutcome out = run(m);
  CHECK(out.exit_code == kExitDiverged);
  CHECK(out.summary["diverged_runs"] == 1);
  CHECK(out.summary["cells"][0]["replicates"][0]["diverged"] == true);
  CHECK(out.summary["cells"][0]["test_loss"]["count"] == 0);
  std::filesystem::remove_all(root);
}

TEST_CASE("short recurrent run writes its curve", "[experiment]") {
  const auto root = scratch_dir("rnn");
  std::filesystem::create_directories(root);
  std::ofstream(root / "cfg.json") << Json{{"schema_version", 1}, {"rnn_hidden", 4},
                                           {"rnn_length", 10},    {"rnn_steps", 20},
                                           {"rnn_log_every", 10}}
                                          .dump();
  RunManifest m;
  m.kind = Kind::RnnAdding;
  m.config_path = root / "cfg.json";
  m.out_root = root / "out";
  m.replicates = 1;
  const RunOutcome out = run(m);
  CHECK(out.exit_code == kExitOk);
  const auto rows = read_lines(out.dir / "rnn_curve.csv");
  REQUIRE(rows.size() == 1 + 2 * 2);
  CHECK(rows[0] == Writer::kCurveHeader);
  CHECK(rows[1].rfind("adding,gurnn_beta,1.4,4,10,10,", 0) == 0);
  CHECK(out.summary["models"].size() == 2);
  CHECK(out.summary["baseline"] == Catch::Approx(1.0 / 6.0));
  std::filesystem::remove_all(root);
}

}  // namespace
}  // namespace ulie::experiment
