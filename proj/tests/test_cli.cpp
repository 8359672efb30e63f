#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

// Drives the installed binary; the path comes from CCCDFSL_CLI or defaults to
// the build-tree location relative to the ctest working directory.

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  if (const char* env = std::getenv("CCCDFSL_CLI")) return env;
  for (const char* cand : {"../tools/cccdfsl", "./build/tools/cccdfsl"})
    if (fs::exists(cand)) return cand;
  return "";
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "cccdfsl_cli_test";
  fs::create_directories(dir);
  const fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
  const fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
  ++counter;
  const std::string cmd =
      cli_path() + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream fo(out), fe(err);
  r.out.assign((std::istreambuf_iterator<char>(fo)), {});
  r.err.assign((std::istreambuf_iterator<char>(fe)), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

const fs::path kWork = fs::temp_directory_path() / "cccdfsl_cli_test";

std::string make_bundle(const std::string& name, const std::string& extra = "") {
  const auto path = (kWork / name).string();
  const auto r = run("gen-synth --C 3 --d 16 --M 6 --A 1 --shots 2 --queries 2 "
                     "--noise-sigma 0.3 --seed 42 " + extra + " --out " + path);
  REQUIRE(r.code == 0);
  return path;
}

} // namespace

TEST_CASE("binary is reachable") {
  REQUIRE(!cli_path().empty());
  fs::create_directories(kWork);
}

TEST_CASE("gen-synth is deterministic and echoes the header") {
  const auto p1 = make_bundle("det1.ccfb");
  const auto p2 = make_bundle("det2.ccfb");
  CHECK(slurp(p1) == slurp(p2));

  const auto r = run("gen-synth --C 3 --d 16 --M 6 --seed 1 --out " +
                     (kWork / "hdr.ccfb").string());
  CHECK(r.code == 0);
  CHECK(r.err.find("C=3 d=16 M=6") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run("gen-synth --C 3 --d 16").code == 2);  // missing --out
  CHECK(run("").code == 2);                        // missing subcommand
  CHECK(run("train").code == 2);                   // missing --bundle
  // infeasible spec values are usage errors too
  CHECK(run("gen-synth --C 20 --d 4 --out " + (kWork / "x.ccfb").string()).code == 2);
}

TEST_CASE("help exits cleanly") {
  CHECK(run("--help").code == 0);
  CHECK(run("train --help").code == 0);
}

TEST_CASE("format errors exit with 4 and missing files with 5") {
  const auto bad = (kWork / "bad.ccfb").string();
  std::ofstream f(bad, std::ios::binary);
  f << "NOPE this is not a bundle";
  f.close();
  CHECK(run("train --bundle " + bad + " --epochs 1").code == 4);
  CHECK(run("eval --bundle " + (kWork / "missing.ccfb").string()).code == 5);
}

TEST_CASE("divergence exits with 3") {
  const auto b = make_bundle("div.ccfb");
  CHECK(run("train --bundle " + b + " --epochs 30 --lr 1e200").code == 3);
}

TEST_CASE("train writes checkpoint and history; eval emits JSON") {
  const auto b = make_bundle("flow.ccfb");
  const auto ckpt = (kWork / "flow.ccpm").string();
  const auto hist = (kWork / "flow.csv").string();
  const auto tr = run("train --bundle " + b + " --epochs 4 --ckpt " + ckpt +
                      " --history " + hist);
  CHECK(tr.code == 0);
  CHECK(fs::exists(ckpt));
  std::ifstream hf(hist);
  std::string header;
  std::getline(hf, header);
  CHECK(header == "epoch,ce,cyc_txt,cyc_img,total,hard_rate,A_g,A_l_transformed");
  std::size_t rows = 0;
  for (std::string line; std::getline(hf, line);) ++rows;
  CHECK(rows == 4);

  const auto ev = run("eval --bundle " + b + " --ckpt " + ckpt + " --prototype");
  CHECK(ev.code == 0);
  const auto j = nlohmann::json::parse(ev.out);
  CHECK(j.contains("accuracy"));
  CHECK(j.contains("A_g"));
  CHECK(j.contains("A_l"));
  CHECK(j.contains("A_l_transformed"));
  CHECK(j.contains("prototype_accuracy"));

  // without --prototype the field is absent
  const auto ev2 = run("eval --bundle " + b + " --ckpt " + ckpt);
  CHECK(!nlohmann::json::parse(ev2.out).contains("prototype_accuracy"));
}

TEST_CASE("trace writes the documented artifacts") {
  const auto b = make_bundle("tr.ccfb");
  const auto out = (kWork / "trdir").string();
  fs::remove_all(out);
  const auto r = run("trace --bundle " + b + " --out " + out);
  CHECK(r.code == 0);
  CHECK(fs::exists(fs::path(out) / "trace.json"));
  CHECK(fs::exists(fs::path(out) / "anchors.csv"));
  const auto j = nlohmann::json::parse(slurp(fs::path(out) / "trace.json"));
  CHECK(j.contains("tit"));
  CHECK(j.contains("iti"));
  // one simmap per (class, support sample): C=3, |S|=6
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().extension() == ".csv" &&
        e.path().filename().string().rfind("simmap_", 0) == 0)
      ++csvs;
  CHECK(csvs == 18);
}

TEST_CASE("config file values load and flags override them") {
  const auto b = make_bundle("cfg.ccfb");
  const auto cfgfile = (kWork / "run.cfg").string();
  {
    std::ofstream f(cfgfile, std::ios::trunc);
    f << "lambda1=0.5\nlambda2=0.25\nepochs=2\n";
  }
  const auto r1 = run("train --bundle " + b + " --config " + cfgfile);
  CHECK(r1.code == 0);
  CHECK(r1.err.find("lambda1=0.5 lambda2=0.25") != std::string::npos);

  const auto r2 = run("train --bundle " + b + " --config " + cfgfile +
                      " --lambda1 2");
  CHECK(r2.code == 0);
  CHECK(r2.err.find("lambda1=2 lambda2=0.25") != std::string::npos);
}

TEST_CASE("dataset presets echo and explicit flags win") {
  const auto b = make_bundle("preset.ccfb");
  const auto r = run("train --bundle " + b + " --dataset eurosat --epochs 1");
  CHECK(r.code == 0);
  CHECK(r.err.find("dataset preset 'eurosat': lambda1=1.5 lambda2=0.2") !=
        std::string::npos);

  const auto r2 =
      run("train --bundle " + b + " --dataset eurosat --lambda1 9 --epochs 1");
  CHECK(r2.code == 0);
  CHECK(r2.err.find("lambda1=9 lambda2=0.2") != std::string::npos);
}

TEST_CASE("bench is byte-deterministic for a fixed seed") {
  const std::string flags =
      "bench --C 2 --d 8 --M 3 --A 1 --shots 1 --queries 2 --signal-patches 1 "
      "--noise-sigma 0.3 --seed 11 --episodes 2 --epochs 3 --compare --threads ";
  const auto r1 = run(flags + "1");
  const auto r2 = run(flags + "2");
  CHECK(r1.code == 0);
  CHECK(r2.code == 0);
  CHECK(!r1.out.empty());
  CHECK(r1.out == r2.out);  // thread count must not change the CSV
  CHECK(r1.out.find("episode,seed,acc_full") == 0);
}

TEST_CASE("bench accepts a family spec file") {
  const auto specfile = (kWork / "family.cfg").string();
  {
    std::ofstream f(specfile, std::ios::trunc);
    f << "C=2\nd=8\nM=3\nA=1\nshots=1\nqueries=2\nsignal-patches=1\n"
         "noise-sigma=0.3\nseed=11\nepisodes=2\nepochs=3\nthreads=1\n";
  }
  const auto direct = run(
      "bench --C 2 --d 8 --M 3 --A 1 --shots 1 --queries 2 --signal-patches 1 "
      "--noise-sigma 0.3 --seed 11 --episodes 2 --epochs 3 --threads 1");
  const auto via_spec = run("bench --spec " + specfile);
  CHECK(via_spec.code == 0);
  CHECK(via_spec.out == direct.out);

  // unknown keys are usage errors
  const auto badfile = (kWork / "bad.cfg").string();
  {
    std::ofstream f(badfile, std::ios::trunc);
    f << "nonsense=1\n";
  }
  CHECK(run("bench --spec " + badfile).code == 2);
}
