#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "hyperite_test_cli";

struct Result {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result cli(const std::string& args) {
  fs::create_directories(kRoot);
  const auto log = kRoot / "stdout.txt";
  const std::string cmd = std::string("\"") + HYPERITE_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

fs::path write_config(const std::string& name, const std::string& json) {
  fs::create_directories(kRoot);
  const auto p = kRoot / name;
  std::ofstream(p) << json;
  return p;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

std::size_t count_fields(const std::string& line) { return 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')); }

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  std::getline(in, l);
  return l;
}

std::size_t occurrences(const std::string& text, const std::string& what) {
  std::size_t n = 0;
  for (auto pos = text.find(what); pos != std::string::npos; pos = text.find(what, pos + 1)) ++n;
  return n;
}

const char* kQuick = R"("training": {"max_epochs": 2, "hidden_width": 8, "hyper_hidden": [8, 8]})";

}  // namespace

TEST_CASE("gen-data writes the default dataset") {
  const auto a = kRoot / "gen" / "a.csv";
  const auto b = kRoot / "gen" / "b.csv";
  fs::remove_all(kRoot / "gen");
  auto r = cli("gen-data --out \"" + a.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("N=1000") != std::string::npos);
  CHECK(r.out.find("treated_fraction=") != std::string::npos);
  CHECK(count_lines(a) == 1001);
  CHECK(count_fields(first_line(a)) == 14);
  REQUIRE(cli("gen-data --out \"" + b.string() + "\"").code == 0);
  CHECK(slurp(a) == slurp(b));

  const auto no_mu = write_config("no_mu.json", R"({"data": {"include_mu": false}})");
  const auto c = kRoot / "gen" / "c.csv";
  REQUIRE(cli("gen-data --config \"" + no_mu.string() + "\" --out \"" + c.string() + "\"").code == 0);
  CHECK(count_fields(first_line(c)) == 12);

  const auto shifted = kRoot / "gen" / "d.csv";
  REQUIRE(cli("gen-data --seed-offset 1 --out \"" + shifted.string() + "\"").code == 0);
  CHECK(slurp(shifted) != slurp(a));
}

TEST_CASE("gen-data rejects a bad config without writing") {
  const auto cfg = write_config("d0.json", R"({"data": {"d": 0}})");
  const auto out = kRoot / "bad" / "data.csv";
  fs::remove_all(kRoot / "bad");
  const auto r = cli("gen-data --config \"" + cfg.string() + "\" --out \"" + out.string() + "\"");
  CHECK(r.code != 0);
  CHECK(r.out.find("d") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("run writes results for every learner and seed") {
  const auto cfg = write_config("run.json", std::string("{") + kQuick + R"(, "data": {"n": 300}})");
  const auto dir = kRoot / "run";
  fs::remove_all(dir);
  const auto r = cli("run --config \"" + cfg.string() + "\" --out \"" + dir.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("PEHE-in") != std::string::npos);
  CHECK(r.out.find("PEHE-out") != std::string::npos);
  CHECK(r.out.find("t_learner/hyper") != std::string::npos);
  CHECK(count_lines(dir / "raw.jsonl") == 20);
  CHECK(count_lines(dir / "results.csv") == 3);
  CHECK(count_lines(dir / "traces.jsonl") == 20);
}

TEST_CASE("output directory from the environment") {
  const auto cfg = write_config("env.json", std::string("{") + kQuick +
                                                R"(, "data": {"n": 200}, "experiment": {"seeds": 1}, "output": {"dir": "ignored"}})");
  const auto dir = kRoot / "env_out";
  fs::remove_all(dir);
  const auto r = cli("run --config \"" + cfg.string() + "\" --out \"\"");
  (void)r;
  ::setenv("HYPERITE_OUT_DIR", dir.string().c_str(), 1);
  const auto r2 = cli("run --config \"" + cfg.string() + "\"");
  ::unsetenv("HYPERITE_OUT_DIR");
  REQUIRE(r2.code == 0);
  CHECK(fs::exists(dir / "raw.jsonl"));
  CHECK(r2.out.find("warning") != std::string::npos);
  fs::remove_all("ignored");
}

TEST_CASE("csv data without counterfactuals fails cleanly") {
  const auto data = kRoot / "nomu" / "data.csv";
  const auto gen = write_config("nomu_gen.json", R"({"data": {"n": 200, "include_mu": false}})");
  REQUIRE(cli("gen-data --config \"" + gen.string() + "\" --out \"" + data.string() + "\"").code == 0);
  const auto cfg = write_config("nomu_run.json", std::string("{") + kQuick + R"(, "data": {"source": "csv", "csv_path": ")" +
                                                     data.string() + R"("}, "experiment": {"seeds": 1}})");
  const auto r = cli("run --config \"" + cfg.string() + "\" --out \"" + (kRoot / "nomu" / "out").string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.out.find("mu0") != std::string::npos);
  CHECK(r.out.find("terminate") == std::string::npos);
  CHECK_FALSE(fs::exists(kRoot / "nomu" / "out" / "raw.jsonl"));
}

TEST_CASE("gradcheck reports every hypernet configuration") {
  const auto r = cli("gradcheck");
  REQUIRE(r.code == 0);
  CHECK(occurrences(r.out, "hypernet/") == 8);
  for (const char* s : {"generate_once", "chunk_wise", "layer_wise", "split_head"}) CHECK(occurrences(r.out, s) == 2);

  const auto bad = write_config("inject.json", R"({"gradcheck": {"draws": 4, "inject_adjoint_error": true}})");
  const auto r2 = cli("gradcheck --config \"" + bad.string() + "\"");
  CHECK(r2.code == 1);
  CHECK(r2.out.find("FAIL") != std::string::npos);
}

TEST_CASE("sweeps print one block per value") {
  const auto emb = write_config("emb.json", std::string("{") + kQuick +
                                                R"(, "data": {"n": 200}, "learners": ["t_learner/hyper"],
      "experiment": {"seeds": 2, "sweep": {"axis": "embedding_size", "values": [8, 16, 32]}}})");
  const auto dir = kRoot / "emb";
  fs::remove_all(dir);
  const auto r = cli("sweep --config \"" + emb.string() + "\" --out \"" + dir.string() + "\" --jobs 2");
  REQUIRE(r.code == 0);
  CHECK(occurrences(r.out, "== embedding_size = ") == 3);
  CHECK(count_lines(dir / "sweep.csv") == 4);
  CHECK(count_lines(dir / "raw.jsonl") == 6);

  const auto strat = write_config("strat.json", std::string("{") + kQuick +
                                                    R"(, "data": {"n": 200}, "learners": ["t_learner/hyper"],
      "experiment": {"seeds": 2, "sweep": {"axis": "strategy"}}})");
  const auto r2 = cli("sweep --config \"" + strat.string() + "\" --out \"" + (kRoot / "strat").string() + "\"");
  REQUIRE(r2.code == 0);
  for (const char* s : {"generate_once", "chunk_wise", "layer_wise", "split_head"}) {
    CHECK(occurrences(r2.out, std::string("== strategy = ") + s) == 1);
  }

  const auto r3 = cli("sweep --out \"" + (kRoot / "none").string() + "\"");
  CHECK(r3.code != 0);
}

TEST_CASE("usage errors") {
  CHECK(cli("").code != 0);
  CHECK(cli("train").code != 0);
  CHECK(cli("run --config /nonexistent.json").code != 0);
}
