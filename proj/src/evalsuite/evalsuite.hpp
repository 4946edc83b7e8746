#pragma once

#include <functional>
#include <string>
#include <vector>

#include "data/data.hpp"
#include "dsp/dsp.hpp"
#include "trainer/trainer.hpp"

namespace vqss::evalsuite {

struct L1Table {
  std::vector<std::string> classes;
  std::vector<double> l1_target;   // per class, mean over items
  std::vector<double> l1_random;   // same items, random codebook conditioning
  std::vector<int64_t> counts;
  std::vector<std::string> warnings;
};

struct ClusterHistogram {
  int n_codes = 0;
  std::vector<std::string> classes;
  std::vector<int64_t> counts;  // [n_codes, classes] row-major

  int64_t at(int code, int cls) const { return counts[code * classes.size() + cls]; }
};

// Everything an estimator may look at for one evaluation item. The model
// estimator uses (mix, code); the oracle stub in the test suite returns
// target directly.
struct EvalItem {
  dsp::Waveform mix;
  dsp::Waveform target;
  int code_index = 0;
  std::vector<double> code;
  std::string label;
};

using EstimateFn = std::function<dsp::Waveform(const EvalItem&)>;

EstimateFn model_estimator(const trainer::Model& model);

// Paired protocol: per labelled test stem draw target/reference crops, mix
// with k_eval other stems, then score the same mixture under (a) the
// reference's quantized embedding and (b) a uniformly random codebook entry.
L1Table eval_l1(const data::Corpus& test_corpus, const trainer::Model& model,
                const EstimateFn& estimate, int k_eval, uint64_t seed);

// reference crop of every test stem -> E -> projection -> quantize, tallied
// against the stem's class label
ClusterHistogram eval_clusters(const data::Corpus& test_corpus, const trainer::Model& model,
                               uint64_t seed);

// per-class purity: share of the class's items on its most-used code
std::vector<double> class_purity(const ClusterHistogram& h);

// table.csv, clusters.csv, clusters.png, grid.png (mel of mix + N separations)
void export_reports(const L1Table& table, const ClusterHistogram& hist,
                    const trainer::Model& model, const dsp::Waveform& example_mix,
                    const std::string& out_dir);

}  // namespace vqss::evalsuite
