#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "pcens/cli.hpp"
#include "pcens/models.hpp"
#include "pcens/pointcloud.hpp"
#include "support/cli_fixtures.hpp"
#include "support/oracles.hpp"

using namespace pcens;
using namespace pcens::cli;
using fixture::read_csv;
using fixture::TempDir;

namespace {

ResolvedConfig resolve_text(Command c, const std::string& text, RunOptions o = {}) {
  return resolve(c, Config::parse(text), o);
}

int run(std::vector<std::string> args, std::string* err_out = nullptr) {
  args.insert(args.begin(), "pcens");
  std::ostringstream o, e;
  const int code = run_main(args, o, e);
  if (err_out) *err_out = e.str();
  return code;
}

}  // namespace

TEST_CASE("config text") {
  const auto c = Config::parse("# comment\n\n  n_classes = 3   # trailing\nfractions=0.1, 0.2\nname = a b\n");
  CHECK(c.values.size() == 3);
  CHECK(c.values.at("n_classes") == "3");
  CHECK(c.values.at("fractions") == "0.1, 0.2");
  CHECK(c.values.at("name") == "a b");
  CHECK_THROWS_AS(Config::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("just words\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse(" = 4\n"), ConfigError);
  CHECK_THROWS_AS(Config::load("/nonexistent/pcens.cfg"), ConfigError);
}

TEST_CASE("fnv1a64") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("commands") {
  CHECK(all_commands().size() == 8);
  std::set<std::string> names;
  for (Command c : all_commands()) {
    names.insert(std::string(command_name(c)));
    CHECK(parse_command(command_name(c)) == c);
  }
  CHECK(names == std::set<std::string>{"gen-data", "simple-ensemble", "bagging", "weight-search", "random-factors",
                                       "head-ensemble", "frustum", "timing"});
  CHECK_THROWS_AS(parse_command("train"), ConfigError);
}

TEST_CASE("schema") {
  SUBCASE("defaults") {
    const auto g = resolve_text(Command::gen_data, "");
    CHECK(g.size("n_classes") == 8);
    CHECK(g.size("train_per_class") + g.size("test_per_class") == 140);
    const auto s = resolve_text(Command::simple_ensemble, "");
    CHECK(s.size("n_instances") == 10);
    CHECK(s.size("k_max") == 10);
    CHECK(s.list("methods") == std::vector<std::string>{"raw_mean", "soft_vote", "hard_vote"});
    CHECK(resolve_text(Command::simple_ensemble, "n_instances = 4").size("k_max") == 4);
    const auto b = resolve_text(Command::bagging, "");
    CHECK(b.reals("fractions").size() == 9);
    CHECK(b.reals("fractions").front() == 0.1);
    CHECK(resolve_text(Command::random_factors, "").size("n_instances") == 5);
    const auto h = resolve_text(Command::head_ensemble, "");
    CHECK(h.size("n_encoders") == 10);
    CHECK(h.size("n_heads") == 5);
    CHECK(h.size("head_epochs") == 31);
    CHECK(resolve_text(Command::frustum, "").size("n_instances") == 3);
    CHECK(resolve_text(Command::timing, "").size("batch_size") == 4);
    CHECK(resolve_text(Command::weight_search, "").real("grid_step") == 0.125);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(resolve_text(Command::gen_data, "n_classes = 1"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::gen_data, "n_classes = 9"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::gen_data, "colour = red"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::gen_data, "n_points = many"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::gen_data, "noise = -1"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::gen_data, "kind = meshes"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::simple_ensemble, "n_instances = 3\nk_max = 4"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::simple_ensemble, "k_min = 5\nk_max = 4"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::simple_ensemble, "methods = raw_mean, majority"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::simple_ensemble, "arch = pointnet"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::simple_ensemble, "dataset = /nonexistent/data.txt"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::simple_ensemble, "augment = maybe"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::bagging, "fractions = 0.5, 0"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::bagging, "fractions = 0.5, 1.5"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::random_factors, "n_instances = 1"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::weight_search, "archs = pointnet_lite"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::weight_search, "archs = pointnet_lite, pointnet_lite"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::weight_search, "constraint.deepsets_lite = >0.4"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::weight_search, "constraint.hier_lite = >>0.4"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::weight_search, "constraint.hier_lite = >0.6\nconstraint.pointnet_lite = >0.6"),
                    ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::timing, "repetitions = 2"), ConfigError);
    CHECK_THROWS_AS(resolve_text(Command::frustum, "iou_threshold = 0"), ConfigError);
    RunOptions zero_jobs;
    zero_jobs.jobs = 0;
    CHECK_THROWS_AS(resolve_text(Command::timing, "", zero_jobs), ConfigError);
  }
  SUBCASE("constraints that fit") {
    const auto w = resolve_text(Command::weight_search, "constraint.hier_lite = >0.4");
    CHECK(w.str("constraint.hier_lite") == ">0.4");
  }
  SUBCASE("seed override and hashing") {
    RunOptions o;
    o.seed = 42;
    CHECK(resolve_text(Command::bagging, "seed = 7", o).u64("seed") == 42);
    CHECK(resolve_text(Command::bagging, "seed = 7").u64("seed") == 7);
    const auto a = resolve_text(Command::bagging, "epochs = 3\nlr = 0.010\n# x\n");
    const auto b = resolve_text(Command::bagging, "lr=1e-2\n  epochs   =   3\n");
    CHECK(a.hash() == b.hash());
    CHECK(a.canonical_text() == b.canonical_text());
    CHECK(a.hash() != resolve_text(Command::bagging, "epochs = 4").hash());
    CHECK(a.hash() != resolve_text(Command::simple_ensemble, "epochs = 3").hash());
  }
}

TEST_CASE("exit codes") {
  TempDir dir("exit");
  std::string err;
  CHECK(run({}, &err) == 2);
  CHECK(run({"train"}) == 2);
  CHECK(run({"--version"}) == 0);
  CHECK(run({"timing", "--config", (dir / "missing.cfg").string()}) == 2);
  fixture::write_text(dir / "bad.cfg", "n_classes = 1\n");
  CHECK(run({"gen-data", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()}, &err) == 2);
  CHECK(err.find("n_classes") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "o"));
  CHECK(run({"timing", "--jobs", "0"}) == 2);
  CHECK(run({"timing", "--seed", "x"}) == 2);

  fixture::write_text(dir / "blocker", "a file where a directory should be\n");
  fixture::write_text(dir / "ok.cfg", fixture::minimal_config(Command::gen_data));
  CHECK(run({"gen-data", "--config", (dir / "ok.cfg").string(), "--out", (dir / "blocker" / "sub").string()}, &err) == 3);

  fixture::write_text(dir / "garbage.txt", "not a dataset\n");
  fixture::write_text(dir / "g.cfg", "dataset = " + (dir / "garbage.txt").string() + "\n");
  CHECK(run({"simple-ensemble", "--config", (dir / "g.cfg").string(), "--out", (dir / "o2").string()}) == 3);
}

TEST_CASE("gen-data") {
  TempDir dir("gen");
  REQUIRE(fixture::run_command(Command::gen_data, dir.path(), dir / "a", fixture::minimal_config(Command::gen_data)) == 0);
  REQUIRE(fixture::run_command(Command::gen_data, dir.path(), dir / "b", fixture::minimal_config(Command::gen_data)) == 0);
  CHECK(fixture::read_text(dir / "a" / "dataset.txt") == fixture::read_text(dir / "b" / "dataset.txt"));
  const auto ds = read_dataset(dir / "a" / "dataset.txt");
  CHECK(ds.n_classes() == 3);
  CHECK(ds.size() == 18);

  REQUIRE(fixture::run_command(Command::gen_data, dir.path(), dir / "c", "kind = scenes\ntrain_scenes = 4\ntest_scenes = 2\n") ==
          0);
  CHECK(read_scenes(dir / "c" / "scenes.txt").size() == 6);
}

TEST_CASE("simple-ensemble report") {
  TempDir dir("simple");
  const auto text = fixture::minimal_config(Command::simple_ensemble);
  REQUIRE(fixture::run_command(Command::simple_ensemble, dir.path(), dir / "a", text) == 0);
  REQUIRE(fixture::run_command(Command::simple_ensemble, dir.path(), dir / "b", text, {"--jobs", "2"}) == 0);
  for (const char* f : {"simple_ensemble.csv", "per_class.csv"})
    CHECK(fixture::read_text(dir / "a" / f) == fixture::read_text(dir / "b" / f));

  const auto csv = read_csv(dir / "a" / "simple_ensemble.csv");
  CHECK(csv.comments.at(0) == "# pcens " + std::string(kVersion));
  CHECK(csv.comments.at(1) == "# command: simple-ensemble");
  CHECK(csv.comments.at(2).rfind("# config_hash: fnv1a64:", 0) == 0);
  CHECK(csv.comments.at(3).rfind("# seeds: ", 0) == 0);
  REQUIRE(csv.rows.size() == 9);
  const auto K = csv.column("K"), m = csv.column("method"), acc = csv.column("instance_mean");
  std::set<std::string> methods;
  for (const auto& row : csv.rows) methods.insert(row[m]);
  CHECK(methods == std::set<std::string>{"raw_mean", "soft_vote", "hard_vote"});
  std::vector<std::string> k1;
  for (const auto& row : csv.rows)
    if (row[K] == "1") k1.push_back(row[acc]);
  REQUIRE(k1.size() == 3);
  CHECK(k1[0] == k1[1]);
  CHECK(k1[1] == k1[2]);

  REQUIRE(fixture::run_command(Command::simple_ensemble, dir.path(), dir / "c", text, {"--seed", "5"}) == 0);
  CHECK(fixture::read_text(dir / "c" / "simple_ensemble.csv") != fixture::read_text(dir / "a" / "simple_ensemble.csv"));
}

TEST_CASE("bagging report") {
  TempDir dir("bag");
  REQUIRE(fixture::run_command(Command::bagging, dir.path(), dir.path(), fixture::minimal_config(Command::bagging)) == 0);
  const auto csv = read_csv(dir / "bagging.csv");
  CHECK(csv.rows.size() == 6);
  std::set<std::string> variants;
  for (const auto& row : csv.rows) variants.insert(row[csv.column("variant")]);
  CHECK(variants == std::set<std::string>{"without_replacement", "with_replacement", "simple"});
}

TEST_CASE("weight-search report") {
  TempDir dir("ws");
  REQUIRE(fixture::run_command(Command::weight_search, dir.path(), dir.path(),
                               fixture::minimal_config(Command::weight_search)) == 0);
  const auto csv = read_csv(dir / "weight_search.csv");
  const auto unit = csv.column("unit"), kind = csv.column("kind");
  const auto w0 = csv.column("w_pointnet_lite"), w1 = csv.column("w_hier_lite");
  std::size_t sub = 0, inst = 0;
  std::vector<std::string> half, uniform;
  for (const auto& row : csv.rows) {
    if (row[unit] == "sub_ensemble") ++sub;
    if (row[unit] == "instance_mean") ++inst;
    CHECK(std::stod(row[w1]) >= 0.25);
    if (row[unit] == "sub_ensemble" && row[w0] == "0.5" && row[w1] == "0.5") half = row;
    if (row[kind] == "raw_mean") uniform = row;
  }
  CHECK(sub == 7);
  CHECK(inst == 7);
  REQUIRE(!half.empty());
  REQUIRE(!uniform.empty());
  CHECK(half[csv.column("instance_accuracy")] == uniform[csv.column("instance_accuracy")]);

  const auto rank = read_csv(dir / "rank.csv");
  REQUIRE(rank.rows.size() == 2);
  CHECK(std::stod(rank.rows[0][1]) + std::stod(rank.rows[1][1]) == doctest::Approx(3.0));
}

TEST_CASE("random-factors report") {
  TempDir dir("rf");
  REQUIRE(fixture::run_command(Command::random_factors, dir.path(), dir.path(),
                               fixture::minimal_config(Command::random_factors)) == 0);
  const auto csv = read_csv(dir / "random_factors.csv");
  REQUIRE(csv.rows.size() == 8);
  const auto& all_const = csv.rows.front();
  CHECK(all_const[0] == "const");
  CHECK(all_const[1] == "const");
  CHECK(all_const[2] == "const");
  CHECK(all_const[csv.column("identical_models")] == "1");
  CHECK(all_const[csv.column("instance_increase")] == "0");
  CHECK(all_const[csv.column("max_score_diff")] == "0");
  for (std::size_t i = 1; i < 8; ++i) CHECK(std::stod(csv.rows[i][csv.column("max_score_diff")]) > 0.0);
}

TEST_CASE("head-ensemble report") {
  TempDir dir("he");
  REQUIRE(fixture::run_command(Command::head_ensemble, dir.path(), dir.path(),
                               fixture::minimal_config(Command::head_ensemble)) == 0);
  const auto csv = read_csv(dir / "head_ensemble.csv");
  CHECK(csv.rows.size() == 2);
  CHECK_NOTHROW(csv.column("instance_increase"));
  const auto sum = read_csv(dir / "head_ensemble_summary.csv");
  CHECK(sum.rows.size() == 6);
}

TEST_CASE("frustum report") {
  TempDir dir("fr");
  const auto text = fixture::minimal_config(Command::frustum);
  REQUIRE(fixture::run_command(Command::frustum, dir.path(), dir / "a", text) == 0);
  REQUIRE(fixture::run_command(Command::frustum, dir.path(), dir / "b", text) == 0);
  for (const char* f : {"frustum.csv", "detections_ground.csv", "detections_full3d.csv"})
    CHECK(fixture::read_text(dir / "a" / f) == fixture::read_text(dir / "b" / f));
  const auto csv = read_csv(dir / "a" / "frustum.csv");
  CHECK(csv.rows.size() == 6);
  const auto det = read_csv(dir / "a" / "detections_ground.csv");
  CHECK(det.header == std::vector<std::string>{"scene_id", "mode", "iou", "correct"});
  CHECK(det.rows.size() == 18);

  CHECK(fixture::run_command(Command::frustum, dir.path(), dir / "dup", text + "n_instances = 1\n") == 2);
}

TEST_CASE("frustum with one instance") {
  TempDir dir("fr1");
  auto text = fixture::minimal_config(Command::frustum);
  text.replace(text.find("n_instances = 2"), 15, "n_instances = 1");
  REQUIRE(fixture::run_command(Command::frustum, dir.path(), dir.path(), text) == 0);
  const auto csv = read_csv(dir / "frustum.csv");
  REQUIRE(csv.rows.size() == 6);
  const auto im = csv.column("iou_mode"), mean = csv.column("mean_iou"), ap = csv.column("ap");
  for (const auto& row : csv.rows)
    for (const auto& other : csv.rows)
      if (row[im] == other[im]) {
        CHECK(row[mean] == other[mean]);
        CHECK(row[ap] == other[ap]);
      }
}

TEST_CASE("timing report") {
  TempDir dir("tm");
  REQUIRE(fixture::run_command(Command::timing, dir.path(), dir.path(), fixture::minimal_config(Command::timing)) == 0);
  const auto csv = read_csv(dir / "timing.csv");
  REQUIRE(csv.rows.size() == 3);
  for (const auto& row : csv.rows) {
    const auto arch = ModelArch::defaults(parse_family(row[0]), 8);
    CHECK(std::stoull(row[csv.column("param_count")]) == oracle::param_count(arch));
    CHECK(row[csv.column("batch_size")] == "4");
    CHECK(std::stod(row[csv.column("mean_ms")]) > 0.0);
  }
}
