#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "emd/font_net.hpp"
#include "emd/glyph.hpp"
#include "emd/nst.hpp"
#include "emd/params.hpp"

namespace emd {

// ---- optimizer ----

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState(const NamedTensors& params, AdamConfig config);

  AdamConfig config;
  std::uint64_t step = 0;
  NamedTensors m, v;  // same names and shapes as the parameters
};

// Bias-corrected Adam update from the current gradients. Every parameter
// must carry a gradient.
void adam_step(const NamedTensors& params, AdamState& state);

// Scales all gradients so that their global L2 norm is at most max_norm.
// Returns the norm before scaling.
double clip_grad_norm(const NamedTensors& params, double max_norm);

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

// Writes "step,loss,wall_ms".
void write_log_line(std::ostream& out, const StepRecord& record);

// ---- typeface training ----

struct TrainConfig {
  double lr = 2e-4;
  std::size_t batch = 4;
  std::size_t n_targets = 20000;
  std::uint64_t steps = 2000;
  std::uint64_t seed = 1;
  int refs = 4;
  double clip_norm = 5.0;
};

// Weighted L1 of the generated batch against its targets.
Tensor batch_loss(Graph& g, FontNet& net, const glyph::GlyphCorpus& corpus, const std::vector<glyph::Triplet>& batch,
                  ops::NormMode mode);

// One forward/backward/update on `batch`; returns the loss before the update.
// Parameters, buffers and moments are rounded to float32 afterwards.
double train_step(FontNet& net, AdamState& adam, const glyph::GlyphCorpus& corpus,
                  const std::vector<glyph::Triplet>& batch, double clip_norm);

// Runs steps [start_step, config.steps). Batches depend only on (seed, step),
// so a run resumed from a checkpoint continues exactly.
std::vector<StepRecord> train_font_net(FontNet& net, AdamState& adam, const glyph::GlyphCorpus& corpus,
                                       const TrainConfig& config, std::uint64_t start_step = 0,
                                       std::ostream* log = nullptr);

struct SuiteMetrics {
  glyph::Cell cell = glyph::Cell::D1;
  std::size_t count = 0;
  double l1 = 0.0, rmse = 0.0, pdar = 0.0;
};

// Per-suite means of the per-image metrics, in eval mode.
std::array<SuiteMetrics, 4> evaluate(FontNet& net, const glyph::GlyphCorpus& corpus,
                                     const std::array<glyph::EvalSuite, 4>& suites, std::size_t chunk = 16);

// ---- model archives ----

// Parameters, BatchNorm buffers, the "meta.font_net" tensor
// [image_size, base_channels, refs, use_skips] and, when given, the optimizer
// moments with "meta.train" [step, adam_step].
NamedTensors font_net_archive(const FontNet& net, const AdamState* adam = nullptr, std::uint64_t step = 0);

struct FontNetArchive {
  FontNet net;
  std::optional<AdamState> adam;  // present when the archive holds moments
  std::uint64_t step = 0;
};

FontNetArchive restore_font_net(const NamedTensors& tensors, double lr = 2e-4);

// Parameters plus "meta.nst" [channels, base_channels, res_blocks].
NamedTensors nst_archive(const nst::NstNet& net);
nst::NstNet restore_nst(const NamedTensors& tensors);

// ---- style transfer training ----

struct NstTrainConfig {
  double lr = 1e-4;
  std::size_t batch = 8;
  std::uint64_t steps = 500;
  std::uint64_t seed = 1;
  // Optimize only the decoder, keeping both encoders fixed.
  bool decoder_only = false;
  nst::LossWeights weights;
};

// Each step pairs `batch` random styles with random contents. All images are
// 1 x C x H x W of one size.
std::vector<StepRecord> train_nst(nst::NstNet& net, AdamState& adam, const nst::FeatureExtractor& extractor,
                                  const std::vector<Tensor>& styles, const std::vector<Tensor>& contents,
                                  const NstTrainConfig& config, std::ostream* log = nullptr);

}  // namespace emd
