#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "umct/checkpoint.hpp"
#include "umct/data.hpp"

using namespace umct;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(UMCT_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf;
  while (fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("umct_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file_bytes(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

// Tiny but complete experiment on a 16^3 dataset.
fs::path write_config(const fs::path& dir, const fs::path& manifest, const std::string& extra = "") {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << R"({"dataset": ")" << manifest.string()
                   << R"(", "stage1": {"iters": 3}, "stage2": {"iters": 2}, "patch": [16, 16, 16],
  "mc_samples": 2, "test_count": 2, "labeled_fraction": 0.5, "arch": {"base_channels": 2, "depth": 2})"
                   << extra << "}\n";
  return p;
}

struct Fixture {
  fs::path dir;
  fs::path manifest;
  fs::path config;
  explicit Fixture(const std::string& name) : dir(fresh_dir(name)) {
    const auto r = run("gen-data --cases 8 --extent 16 --seed 2 --out " + (dir / "data").string());
    REQUIRE(r.code == 0);
    manifest = dir / "data" / "manifest.tsv";
    config = write_config(dir, manifest);
  }
  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("cli: gen-data writes a manifest, reruns are identical, zero cases is a usage error") {
  const auto dir = fresh_dir("gen");
  const auto a = run("gen-data --cases 80 --extent 32 --seed 1 --out " + (dir / "a").string());
  REQUIRE(a.code == 0);
  CHECK(a.out.find("manifest.tsv") != std::string::npos);
  CHECK(read_manifest(dir / "a/manifest.tsv").cases.size() == 80);
  REQUIRE(run("gen-data --cases 80 --extent 32 --seed 1 --out " + (dir / "b").string()).code == 0);
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    CHECK(read_file_bytes(e.path()) == read_file_bytes(dir / "b" / rel));
  }
  const auto z = run("gen-data --cases 0 --out " + (dir / "z").string());
  CHECK(z.code == 2);
  CHECK(run("gen-data --bogus").code == 2);
  CHECK(run("").code == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: config errors name the field and exit with the config code") {
  Fixture f("cfg");
  write_config(f.dir, f.manifest, R"(, "stage2": {"itres": 3})");
  const auto r = run("train --config " + f.config.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("stage2.itres") != std::string::npos);
  write_config(f.dir, f.manifest);
  CHECK(run("train --config " + f.config.string() + " --lambda-cot -1").code == 2);
  CHECK(run("train --config " + f.config.string() + " --mode sometimes").code == 2);
  // runtime failure: dataset files missing
  fs::remove_all(f.dir / "data/images");
  CHECK(run("train --config " + f.config.string() + " --out " + (f.dir / "x").string()).code == 3);
}

TEST_CASE("cli: supervised single-view baseline never computes the co-training loss") {
  Fixture f("sup1");
  const auto out = f.dir / "sup";
  REQUIRE(run("train --config " + f.config.string() + " --mode supervised --views 1 --out " + out.string()).code == 0);
  const auto rows = read_csv(out / "iterations.csv");
  const auto& h = rows.front();
  const auto col = std::find(h.begin(), h.end(), "l_cot") - h.begin();
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][static_cast<std::size_t>(col)].empty());
  CHECK(read_csv(out / "fusion.csv").size() == 1);
  CHECK(fs::exists(out / "final/view0.ckpt"));
  CHECK_FALSE(fs::exists(out / "final/view1.ckpt"));
}

TEST_CASE("cli: lambda 0 semi run equals the supervised baseline; fusion flag only changes fusion") {
  Fixture f("lam");
  const auto c = "train --config " + f.config.string();
  REQUIRE(run(c + " --mode semi --lambda-cot 0 --out " + (f.dir / "z").string()).code == 0);
  REQUIRE(run(c + " --mode supervised --out " + (f.dir / "s").string()).code == 0);
  CHECK(read_file_bytes(f.dir / "z/metrics.csv") == read_file_bytes(f.dir / "s/metrics.csv"));
  for (int v = 0; v < 3; ++v) {
    const auto name = "final/view" + std::to_string(v) + ".ckpt";
    CHECK(read_file_bytes(f.dir / "z" / name) == read_file_bytes(f.dir / "s" / name));
  }

  REQUIRE(run(c + " --fusion uniform --out " + (f.dir / "u").string()).code == 0);
  REQUIRE(run(c + " --fusion ulf --out " + (f.dir / "w").string()).code == 0);
  auto u = read_file_bytes(f.dir / "u/run_manifest.json"), w = read_file_bytes(f.dir / "w/run_manifest.json");
  const auto pos = u.find("\"uniform\"");
  REQUIRE(pos != std::string::npos);
  u.replace(pos, 9, "\"ulf\"");
  for (const char* d : {"/u", "/w"}) {
    auto& s = d[1] == 'u' ? u : w;
    const auto o = s.find("\"output_dir\"");
    s.erase(o, s.find('\n', o) - o);
  }
  CHECK(u == w);
}

TEST_CASE("cli: eval reports, oracle flag, ensemble rows") {
  Fixture f("eval");
  const auto run_dir = f.dir / "r";
  REQUIRE(run("train --config " + f.config.string() + " --out " + run_dir.string()).code == 0);
  const auto rm = (run_dir / "run_manifest.json").string();

  REQUIRE(run("eval --checkpoints " + run_dir.string() + " --manifest " + rm + " --report " +
              (f.dir / "e.csv").string()).code == 0);
  // same window as the run: identical to the in-run metrics
  CHECK(read_file_bytes(f.dir / "e.csv") == read_file_bytes(run_dir / "metrics.csv"));

  const auto rows = read_csv(f.dir / "e.csv");
  double sum = 0;
  int n = 0;
  bool ens = false;
  for (const auto& r : rows) {
    if (r[0] != "case_id" && r[0] != "summary" && r[1].starts_with("single-")) {
      sum += std::stod(r[3]);
      ++n;
    }
    ens = ens || r[1].starts_with("ensemble");
  }
  CHECK(ens);
  const auto mean_row = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r[1] == "mean-single"; });
  REQUIRE(mean_row != rows.end());
  CHECK(std::stod((*mean_row)[3]) == doctest::Approx(sum / n).epsilon(1e-8));

  REQUIRE(run("eval --checkpoints " + run_dir.string() + " --manifest " + rm + " --ensemble none --report " +
              (f.dir / "n.csv").string()).code == 0);
  for (const auto& r : read_csv(f.dir / "n.csv")) CHECK_FALSE(r[1].starts_with("ensemble"));

  REQUIRE(run("eval --debug-oracle --manifest " + rm + " --report " + (f.dir / "o.csv").string()).code == 0);
  for (const auto& r : read_csv(f.dir / "o.csv"))
    if (r[0] != "case_id") CHECK(std::stod(r[3]) == 1.0);

  CHECK(run("eval --checkpoints " + (f.dir / "nothing").string() + " --manifest " + rm).code == 3);
}

TEST_CASE("cli: reproduce from a run manifest is bit-identical") {
  Fixture f("repro");
  const auto a = f.dir / "a";
  REQUIRE(run("train --config " + f.config.string() + " --seed 5 --out " + a.string()).code == 0);
  REQUIRE(run("reproduce --manifest " + (a / "run_manifest.json").string() + " --out " + (f.dir / "b").string())
              .code == 0);
  for (const char* name : {"final/view0.ckpt", "final/view1.ckpt", "final/view2.ckpt", "metrics.csv",
                           "iterations.csv", "fusion.csv"})
    CHECK_MESSAGE(read_file_bytes(a / name) == read_file_bytes(f.dir / "b" / name), name);
}

TEST_CASE("cli: output root from the environment") {
  Fixture f("env");
  const auto root = f.dir / "root";
  REQUIRE(run("train --config " + f.config.string() + " --mode supervised --seed 3", "UMCT_OUTPUT_ROOT=" + root.string())
              .code == 0);
  CHECK(fs::exists(root / "run-supervised-v3-s3/metrics.csv"));
}

TEST_CASE("cli: sweep writes a tidy CSV, records aborted runs and keeps going") {
  Fixture f("sweep");
  const auto out = f.dir / "sw";
  const auto r = run("sweep --config " + f.config.string() + " --axis labeled_fraction --values 0.5,1.0,0 --seeds 2 " +
                     "--parallel 2 --out " + out.string());
  REQUIRE(r.code == 0);
  const auto rows = read_csv(out / "sweep-labeled_fraction/sweep.csv");
  int ok_single = 0, failed = 0;
  std::set<std::string> seeds;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    seeds.insert(row[1] + "/" + row[3]);
    if (row[4] == "ok" && row[5] == "mean_single_dsc") {
      ++ok_single;
      // matches the run's own metrics file
      const auto run_rows = read_csv(out / "sweep-labeled_fraction" / ("labeled_fraction=" + row[1]) /
                                     ("rep" + row[2]) / "metrics.csv");
      const auto m = std::find_if(run_rows.begin(), run_rows.end(), [](const auto& x) { return x[1] == "mean-single"; });
      REQUIRE(m != run_rows.end());
      CHECK(std::stod((*m)[3]) == doctest::Approx(std::stod(row[6])).epsilon(1e-8));
    }
    if (row[4].starts_with("failed")) ++failed;
  }
  CHECK(ok_single == 4);
  CHECK(failed == 2);
  CHECK(seeds.size() == 6);
  CHECK(run("sweep --config " + f.config.string() + " --axis depth --values 1").code == 2);

  // Adding a value leaves the seeds of existing values unchanged.
  const auto r2 = run("sweep --config " + f.config.string() + " --axis lambda_cot --values 0.1 --seeds 1 --out " +
                      (f.dir / "s2").string());
  const auto r3 = run("sweep --config " + f.config.string() + " --axis lambda_cot --values 0.3,0.1 --seeds 1 --out " +
                      (f.dir / "s3").string());
  REQUIRE(r2.code == 0);
  REQUIRE(r3.code == 0);
  const auto a = read_csv(f.dir / "s2/sweep-lambda_cot/sweep.csv");
  const auto b = read_csv(f.dir / "s3/sweep-lambda_cot/sweep.csv");
  auto seed_of = [](const auto& rows, const std::string& v) {
    for (const auto& r : rows)
      if (r[1] == v) return r[3];
    return std::string();
  };
  CHECK(seed_of(a, "0.1") == seed_of(b, "0.1"));
  CHECK(seed_of(a, "0.1") != seed_of(b, "0.3"));
}
