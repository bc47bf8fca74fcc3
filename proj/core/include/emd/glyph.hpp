#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "emd/image.hpp"
#include "emd/tensor.hpp"

// Synthetic glyph corpus: parametric styles x procedural stroke skeletons,
// its known/novel partition, and reference-set sampling.
namespace emd::glyph {

struct Point {
  double x = 0.0, y = 0.0;
};
using Polyline = std::vector<Point>;

// Content: a fixed set of strokes in the unit square (y grows downwards).
struct GlyphSpec {
  int content_id = 0;
  std::vector<Polyline> skeleton;
};

struct StyleSpec {
  int style_id = 0;
  double stroke_thickness = 0.06;  // stroke width as a fraction of the image side
  double slant = 0.0;              // horizontal shear
  double scale = 1.0;
  double darkness = 1.0;
};

inline constexpr double kThicknessMin = 0.03, kThicknessMax = 0.12;
inline constexpr double kSlantMin = -0.3, kSlantMax = 0.3;
inline constexpr double kScaleMin = 0.7, kScaleMax = 1.0;
inline constexpr double kDarknessMin = 0.4, kDarknessMax = 1.0;

// Number of distinct skeletons the embedded alphabet provides.
std::size_t alphabet_size();
GlyphSpec glyph_spec(int content_id);
StyleSpec style_spec(std::uint64_t corpus_seed, int style_id);

// White background; value = 1 - darkness * coverage, coverage a linear ramp
// one pixel wide around the stroke edge. Pure function of its inputs.
Image render_glyph(const StyleSpec& style, const GlyphSpec& content, int size);

// ---- partition ----

struct DatasetPartition {
  std::vector<int> known_styles, novel_styles;
  std::vector<int> known_contents, novel_contents;

  int n_styles() const { return static_cast<int>(known_styles.size() + novel_styles.size()); }
  int n_contents() const { return static_cast<int>(known_contents.size() + novel_contents.size()); }
  bool is_known_style(int s) const;
  bool is_known_content(int c) const;
};

// Seeded shuffle, then floor(25%) of each axis becomes novel.
DatasetPartition make_partition(int n_styles, int n_contents, std::uint64_t seed);

enum class Cell { D1, D2, D3, D4 };
const char* cell_name(Cell cell);
Cell cell_of(const DatasetPartition& p, int style, int content);

// ---- reference sets and triplets ----

struct ReferenceSet {
  enum class Kind { style, content };
  Kind kind = Kind::style;
  int anchor = 0;                 // the shared style (or content) id
  std::vector<int> counterparts;  // distinct content (or style) ids, one per image
};

struct Triplet {
  int style = 0, content = 0;  // the target image
  ReferenceSet style_refs, content_refs;
};

// N_t targets drawn from D1; each batch re-samples reference sets from D1.
// Batches are a pure function of (seed, step).
class TripletSampler {
 public:
  TripletSampler(const DatasetPartition& partition, std::size_t n_targets, int r, std::uint64_t seed);

  std::vector<Triplet> batch(std::size_t batch_size, std::uint64_t step) const;
  const std::vector<std::pair<int, int>>& targets() const { return targets_; }

 private:
  DatasetPartition partition_;
  std::vector<std::pair<int, int>> targets_;
  int r_;
  std::uint64_t seed_;
};

std::vector<Triplet> sample_training_batch(const DatasetPartition& partition, std::size_t n_targets, int r,
                                           std::size_t batch, std::uint64_t seed);

struct EvalSuite {
  Cell cell = Cell::D1;
  std::vector<Triplet> items;
};

// One suite per cell. References share the target's style (content) and come
// from any other cell; the target image itself is never a reference.
std::array<EvalSuite, 4> build_eval_sets(const DatasetPartition& partition, int r, std::uint64_t seed,
                                         std::size_t per_suite = 64);

// ---- corpus ----

class GlyphCorpus {
 public:
  // Renders every (style, content) image, quantized to 8 bits.
  static GlyphCorpus generate(int n_styles, int n_contents, int size, std::uint64_t seed);
  // Reads a directory written by export_to().
  static GlyphCorpus load(const std::filesystem::path& dir);
  void export_to(const std::filesystem::path& dir) const;

  std::uint64_t seed() const { return seed_; }
  int n_styles() const { return n_styles_; }
  int n_contents() const { return n_contents_; }
  int size() const { return size_; }
  const DatasetPartition& partition() const { return partition_; }
  std::span<const double> image(int style, int content) const;
  const StyleSpec& style(int id) const { return styles_.at(static_cast<std::size_t>(id)); }

  // B x r x H x W stack of the reference images of each set.
  Tensor reference_tensor(std::span<const ReferenceSet> sets) const;
  Tensor style_reference_tensor(std::span<const Triplet> triplets) const;
  Tensor content_reference_tensor(std::span<const Triplet> triplets) const;
  // B x 1 x H x W targets.
  Tensor target_tensor(std::span<const Triplet> triplets) const;

  static std::string image_filename(int style, int content);

 private:
  std::uint64_t seed_ = 0;
  int n_styles_ = 0, n_contents_ = 0, size_ = 0;
  DatasetPartition partition_;
  std::vector<StyleSpec> styles_;
  std::vector<std::vector<double>> images_;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emd::glyph
