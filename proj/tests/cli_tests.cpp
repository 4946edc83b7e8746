// Subprocess checks of the vqss command-line tool. Takes the binary path as
// argv[1], prints one line per check, exits non-zero on any failure.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "core/wav.hpp"
#include "trainer/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void check(bool ok, const std::string& what) {
  std::printf("[%s] %s\n", ok ? " ok " : "FAIL", what.c_str());
  if (!ok) ++g_failures;
}

struct RunResult {
  int exit_code = -1;
  std::string out, err;
};

RunResult run(const std::string& cmd) {
  const auto out_path = fs::temp_directory_path() / "vqss_cli_out.txt";
  const auto err_path = fs::temp_directory_path() / "vqss_cli_err.txt";
  const std::string full = cmd + " > " + out_path.string() + " 2> " + err_path.string();
  const int rc = std::system(full.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

bool trees_identical(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  for (const auto& r : rel) {
    std::ifstream fa(a / r, std::ios::binary), fb(b / r, std::ios::binary);
    if (!fa || !fb) return false;
    std::vector<char> ba((std::istreambuf_iterator<char>(fa)), {});
    std::vector<char> bb((std::istreambuf_iterator<char>(fb)), {});
    if (ba != bb) return false;
  }
  return true;
}

void write_mini_dataset(const fs::path& dir) {
  fs::create_directories(dir / "tones");
  fs::create_directories(dir / "noise");
  for (int i = 0; i < 3; ++i) {
    std::vector<double> tone(static_cast<size_t>(2.0 * 44100));
    const double f = 180.0 + 100.0 * i;
    for (size_t t = 0; t < tone.size(); ++t)
      tone[t] = 0.5 * std::sin(2.0 * M_PI * f * t / 44100.0);
    vqss::core::write_wav_pcm16((dir / "tones" / ("t" + std::to_string(i) + ".wav")).string(),
                                tone, 44100);
    std::vector<double> nz(tone.size());
    uint64_t state = 777 + i;
    for (auto& x : nz) {
      state = state * 6364136223846793005ull + 1442695040888963407ull;
      x = 0.6 * (static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5);
    }
    vqss::core::write_wav_pcm16((dir / "noise" / ("n" + std::to_string(i) + ".wav")).string(), nz,
                                44100);
  }
}

int count_files(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) ++n;
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_tests <path to vqss binary>\n");
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = fs::temp_directory_path() / ("vqss_cli_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);

  // bare invocation is a usage error
  check(run(cli).exit_code == 1, "no subcommand exits 1");

  // ---- make-toy ----
  const auto toy_a = work / "toy_a";
  const auto toy_b = work / "toy_b";
  auto r = run(cli + " make-toy --out " + toy_a.string() + " --seed 7");
  check(r.exit_code == 0, "make-toy exits 0");
  check(count_files(toy_a, ".wav") == 240, "make-toy writes 240 wavs");
  run(cli + " make-toy --out " + toy_b.string() + " --seed 7");
  check(trees_identical(toy_a, toy_b), "same seed gives an identical corpus");
  r = run(cli + " make-toy --out /proc/vqss_cannot_write --seed 7");
  check(r.exit_code != 0, "unwritable output dir exits non-zero");
  check(!r.err.empty(), "unwritable output dir reports on stderr");

  // ---- train ----
  const auto dataset = work / "stems";
  write_mini_dataset(dataset);
  const auto cfg = work / "train.cfg";
  {
    std::ofstream f(cfg);
    f << "model = toy\n"
      << "codebook_size = 4\n"
      << "batch_size = 4\n"
      << "total_steps = 200\n"
      << "checkpoint_every = 100\n"
      << "loss_scales = 512,128\n"
      << "seed = 31\n";
  }
  r = run(cli + " train --config " + cfg.string());
  check(r.exit_code == 1, "train without dataset_dir exits 1");
  check(r.err.find("dataset_dir") != std::string::npos, "error names the missing key");

  const auto run_dir = work / "run";
  r = run(cli + " train --config " + cfg.string() + " --set dataset_dir=" + dataset.string() +
          " --set run_dir=" + run_dir.string());
  check(r.exit_code == 0, "200-step smoke training exits 0");
  check(fs::exists(run_dir / "checkpoint_00000200.vqss"), "final checkpoint exists");
  check(fs::exists(run_dir / "training_log.csv"), "training log exists");
  const auto resolved = run_dir / "config_resolved.cfg";
  check(fs::exists(resolved), "resolved config is emitted");
  bool reloadable = false;
  try {
    std::ifstream f(resolved);
    std::string text((std::istreambuf_iterator<char>(f)), {});
    const auto parsed = vqss::trainer::config_from_kv(text);
    reloadable = parsed.total_steps == 200 && parsed.dataset_dir == dataset.string();
  } catch (...) {
  }
  check(reloadable, "resolved config is re-loadable");

  const std::string checkpoint = (run_dir / "checkpoint_00000200.vqss").string();

  // ---- separate ----
  const auto mix_path = work / "mix.wav";
  {
    std::vector<double> mix(66150);
    for (size_t t = 0; t < mix.size(); ++t)
      mix[t] = 0.4 * std::sin(2.0 * M_PI * 330.0 * t / 44100.0);
    vqss::core::write_wav_pcm16(mix_path.string(), mix, 44100);
  }
  r = run(cli + " separate --input " + mix_path.string() + " --checkpoint /nope.vqss --out " +
          (work / "sep0").string());
  check(r.exit_code == 2, "missing checkpoint exits 2");

  const auto bad_rate = work / "mix48.wav";
  {
    std::vector<double> mix(48000, 0.1);
    vqss::core::write_wav_pcm16(bad_rate.string(), mix, 48000);
  }
  r = run(cli + " separate --input " + bad_rate.string() + " --checkpoint " + checkpoint +
          " --out " + (work / "sep1").string());
  check(r.exit_code == 1, "non-44.1 kHz input exits 1");
  check(r.err.find("44100") != std::string::npos, "sample-rate error is explicit");

  r = run(cli + " separate --input " + mix_path.string() + " --checkpoint " + checkpoint +
          " --out " + (work / "sep").string());
  check(r.exit_code == 0, "separate exits 0");
  check(count_files(work / "sep", ".wav") == 4, "one wav per codebook entry");
  check(fs::exists(work / "sep" / "sources.json"), "sidecar json exists");

  // ---- eval ----
  r = run(cli + " eval --test-dir /nope --checkpoint " + checkpoint + " --out " +
          (work / "rep0").string());
  check(r.exit_code != 0, "bad test dir exits non-zero");
  r = run(cli + " eval --test-dir " + dataset.string() + " --checkpoint " + checkpoint +
          " --out " + (work / "rep1").string() + " --seed 5 --k 2");
  check(r.exit_code == 0, "eval exits 0");
  for (const char* f : {"table.csv", "clusters.csv", "clusters.png", "grid.png", "summary.json"})
    check(fs::exists(work / "rep1" / f), std::string("eval emits ") + f);
  run(cli + " eval --test-dir " + dataset.string() + " --checkpoint " + checkpoint + " --out " +
      (work / "rep2").string() + " --seed 5 --k 2");
  {
    std::ifstream a(work / "rep1" / "table.csv"), b(work / "rep2" / "table.csv");
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    check(!sa.empty() && sa == sb, "eval is reproducible for a fixed seed");
  }

  // ---- codebook ----
  r = run(cli + " codebook --checkpoint " + checkpoint);
  check(r.exit_code == 0, "codebook exits 0");
  int entry_rows = 0;
  std::istringstream lines(r.out);
  std::string line;
  bool cosine_header = false;
  while (std::getline(lines, line)) {
    if (line.rfind("entry", 0) == 0) ++entry_rows;
    if (line.find("pairwise cosine") != std::string::npos) cosine_header = true;
  }
  check(entry_rows == 4, "codebook prints one row per entry");
  check(cosine_header, "codebook prints the cosine matrix");

  fs::remove_all(work);
  std::printf("%s: %d failure(s)\n", g_failures == 0 ? "SUCCESS" : "FAILURE", g_failures);
  return g_failures == 0 ? 0 : 1;
}
