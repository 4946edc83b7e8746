// vqss command-line front end. Talks to the core library exclusively through
// the C API in vqss.h.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vqss.h"

namespace fs = std::filesystem;

namespace {

int status_to_exit(vqss_status s) {
  switch (s) {
    case VQSS_OK:
      return 0;
    case VQSS_ERR_INVALID_ARGUMENT:
      return 1;
    default:
      return 2;
  }
}

int fail(vqss_status s) {
  std::cerr << "error: " << vqss_last_error() << "\n";
  return status_to_exit(s);
}

struct ModelHandle {
  vqss_model* m = nullptr;
  ~ModelHandle() { vqss_model_close(m); }
};

int cmd_make_toy(const std::string& out_dir, uint64_t seed) {
  const auto s = vqss_make_toy_corpus(out_dir.c_str(), seed);
  if (s != VQSS_OK) return fail(s);
  std::cout << "toy corpus written to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  std::ifstream f(config_path);
  if (!f) {
    std::cerr << "error: cannot open config file: " << config_path << "\n";
    return 1;
  }
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  // command-line overrides win: the parser applies later lines over earlier ones
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got " << kv << "\n";
      return 1;
    }
    text += "\n" + kv.substr(0, eq) + " = " + kv.substr(eq + 1) + "\n";
  }

  const auto merged = fs::temp_directory_path() /
                      ("vqss_config_" + std::to_string(::getpid()) + ".cfg");
  {
    std::ofstream out(merged, std::ios::trunc);
    out << text;
  }
  char checkpoint[4096] = {0};
  const auto s = vqss_train_run(merged.string().c_str(), checkpoint, sizeof(checkpoint));
  std::error_code ec;
  fs::remove(merged, ec);
  if (s != VQSS_OK) return fail(s);
  std::cout << "training finished; final checkpoint: " << checkpoint << "\n";
  return 0;
}

int cmd_separate(const std::string& input, const std::string& checkpoint,
                 const std::string& out_dir) {
  ModelHandle h;
  auto s = vqss_model_open(checkpoint.c_str(), &h.m);
  if (s != VQSS_OK) return fail(s);
  s = vqss_separate_file(h.m, input.c_str(), out_dir.c_str());
  if (s != VQSS_OK) return fail(s);
  std::cout << "wrote " << vqss_model_codebook_size(h.m) << " sources to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& test_dir, const std::string& checkpoint,
             const std::string& out_dir, int k_eval, uint64_t seed) {
  ModelHandle h;
  auto s = vqss_model_open(checkpoint.c_str(), &h.m);
  if (s != VQSS_OK) return fail(s);
  s = vqss_evaluate(h.m, test_dir.c_str(), out_dir.c_str(), k_eval, seed);
  if (s != VQSS_OK) return fail(s);
  std::cout << "evaluation reports written to " << out_dir << "\n";
  return 0;
}

int cmd_codebook(const std::string& checkpoint) {
  ModelHandle h;
  auto s = vqss_model_open(checkpoint.c_str(), &h.m);
  if (s != VQSS_OK) return fail(s);
  const int n = vqss_model_codebook_size(h.m);
  const int dim = vqss_model_code_dim(h.m);
  std::vector<std::vector<double>> entries(n, std::vector<double>(dim));
  std::printf("codebook: %d entries, dim %d\n", n, dim);
  for (int i = 0; i < n; ++i) {
    double ema = 0.0;
    if ((s = vqss_model_codebook_entry(h.m, i, entries[i].data(), dim)) != VQSS_OK) return fail(s);
    if ((s = vqss_model_codebook_usage(h.m, i, &ema)) != VQSS_OK) return fail(s);
    double norm = 0.0;
    for (double x : entries[i]) norm += x * x;
    std::printf("entry %2d  ema_size %9.3f  norm %.8f  [", i, ema, std::sqrt(norm));
    for (int d = 0; d < dim; ++d) std::printf("%s%+.4f", d ? " " : "", entries[i][d]);
    std::printf("]\n");
  }
  std::printf("pairwise cosine similarity:\n");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int d = 0; d < dim; ++d) dot += entries[i][d] * entries[j][d];
      std::printf("%s%+.3f", j ? " " : "", dot);
    }
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"query-free source separation via a vector-quantized codebook sweep"};
  app.require_subcommand(1);

  std::string out_dir, config_path, input, checkpoint, test_dir, run_dir;
  uint64_t seed = 1234;
  int k_eval = 4;
  std::vector<std::string> overrides;
  app.add_option("--run-dir", run_dir,
                 "base directory; relative paths resolve against it and training outputs go here")
      ->envname("VQSS_RUN_DIR");

  auto* make_toy = app.add_subcommand("make-toy", "generate the synthetic 4-class corpus");
  make_toy->add_option("--out", out_dir, "output directory")->required();
  make_toy->add_option("--seed", seed, "corpus seed");

  auto* train = app.add_subcommand("train", "train from a key-value config file");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--set", overrides, "override a config key (key=value); repeatable");

  auto* separate = app.add_subcommand("separate", "sweep the codebook over a mixture");
  separate->add_option("--input", input, "mixture WAV (44.1 kHz)")->required();
  separate->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  separate->add_option("--out", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "paired L1 table + cluster histogram on a labelled set");
  eval->add_option("--test-dir", test_dir, "labelled stem directory")->required();
  eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  eval->add_option("--out", out_dir, "report directory")->required();
  eval->add_option("--k", k_eval, "stems mixed with each target");
  eval->add_option("--seed", seed, "evaluation seed");

  auto* codebook = app.add_subcommand("codebook", "print codebook entries and usage");
  codebook->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto resolve = [&run_dir](std::string& p) {
    if (!run_dir.empty() && !p.empty() && !fs::path(p).is_absolute())
      p = (fs::path(run_dir) / p).string();
  };
  resolve(out_dir);
  resolve(config_path);
  resolve(input);
  resolve(checkpoint);
  resolve(test_dir);
  if (!run_dir.empty() && train->parsed()) overrides.push_back("run_dir=" + run_dir);

  if (make_toy->parsed()) return cmd_make_toy(out_dir, seed);
  if (train->parsed()) return cmd_train(config_path, overrides);
  if (separate->parsed()) return cmd_separate(input, checkpoint, out_dir);
  if (eval->parsed()) return cmd_eval(test_dir, checkpoint, out_dir, k_eval, seed);
  if (codebook->parsed()) return cmd_codebook(checkpoint);
  return 1;
}
