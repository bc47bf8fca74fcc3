#include "emd/glyph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "emd/params.hpp"

namespace emd::glyph {

namespace {

// Stroke primitives on the unit square. Every glyph is a distinct subset of
// three (or, past the first C(16,3) ids, four) of them.
const std::vector<Polyline>& primitives() {
  static const std::vector<Polyline> strokes = {
      {{0.20, 0.25}, {0.80, 0.25}},                // top bar
      {{0.20, 0.50}, {0.80, 0.50}},                // middle bar
      {{0.20, 0.75}, {0.80, 0.75}},                // bottom bar
      {{0.25, 0.20}, {0.25, 0.80}},                // left stem
      {{0.50, 0.20}, {0.50, 0.80}},                // centre stem
      {{0.75, 0.20}, {0.75, 0.80}},                // right stem
      {{0.20, 0.20}, {0.80, 0.80}},                // falling diagonal
      {{0.80, 0.20}, {0.20, 0.80}},                // rising diagonal
      {{0.30, 0.20}, {0.30, 0.60}, {0.70, 0.60}},  // hook
      {{0.30, 0.30}, {0.42, 0.42}},                // dot
      {{0.25, 0.60}, {0.50, 0.30}, {0.75, 0.60}},  // roof
      {{0.25, 0.40}, {0.50, 0.70}, {0.75, 0.40}},  // cup
      {{0.50, 0.35}, {0.80, 0.35}},                // upper half bar
      {{0.35, 0.50}, {0.35, 0.85}},                // lower half stem
      {{0.65, 0.20}, {0.80, 0.20}, {0.80, 0.50}},  // bracket
      {{0.50, 0.65}, {0.65, 0.85}, {0.85, 0.85}},  // tail
  };
  return strokes;
}

constexpr std::uint64_t kAlphabetSeed = 0x5EED0A1FULL;

std::vector<std::vector<int>> subsets(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    out.push_back(idx);
    int i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

// Content id -> primitive subset. Three-stroke glyphs come first, each block
// in a fixed pseudo-random order so that neighbouring ids look unrelated.
const std::vector<std::vector<int>>& alphabet() {
  static const std::vector<std::vector<int>> table = [] {
    const int n = static_cast<int>(primitives().size());
    std::vector<std::vector<int>> all;
    Rng rng(kAlphabetSeed);
    for (int k : {3, 4}) {
      auto block = subsets(n, k);
      rng.shuffle(block);
      all.insert(all.end(), block.begin(), block.end());
    }
    return all;
  }();
  return table;
}

double lerp(double lo, double hi, double u) { return lo + (hi - lo) * u; }

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

std::vector<int> sample_distinct(const std::vector<int>& pool, int r, Rng& rng) {
  std::vector<int> v = pool;
  for (int i = 0; i < r; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + rng.index(v.size() - static_cast<std::size_t>(i));
    std::swap(v[static_cast<std::size_t>(i)], v[j]);
  }
  v.resize(static_cast<std::size_t>(r));
  return v;
}

std::vector<int> iota_except(int n, int skip) {
  std::vector<int> v;
  for (int i = 0; i < n; ++i) {
    if (i != skip) v.push_back(i);
  }
  return v;
}

void write_ids(std::ostream& out, const char* key, const std::vector<int>& ids) {
  out << key;
  for (int id : ids) out << ' ' << id;
  out << '\n';
}

}  // namespace

std::size_t alphabet_size() { return alphabet().size(); }

GlyphSpec glyph_spec(int content_id) {
  if (content_id < 0 || static_cast<std::size_t>(content_id) >= alphabet_size()) {
    throw std::out_of_range("content id " + std::to_string(content_id) + " outside the alphabet of " +
                            std::to_string(alphabet_size()) + " glyphs");
  }
  GlyphSpec g;
  g.content_id = content_id;
  for (int s : alphabet()[static_cast<std::size_t>(content_id)]) {
    g.skeleton.push_back(primitives()[static_cast<std::size_t>(s)]);
  }
  return g;
}

StyleSpec style_spec(std::uint64_t corpus_seed, int style_id) {
  if (style_id < 0) throw std::out_of_range("negative style id");
  Rng rng(mix_seed(corpus_seed, 0x57E1E000ULL + static_cast<std::uint64_t>(style_id)));
  StyleSpec s;
  s.style_id = style_id;
  s.stroke_thickness = lerp(kThicknessMin, kThicknessMax, rng.uniform());
  s.slant = lerp(kSlantMin, kSlantMax, rng.uniform());
  s.scale = lerp(kScaleMin, kScaleMax, rng.uniform());
  s.darkness = lerp(kDarknessMin, kDarknessMax, rng.uniform());
  return s;
}

Image render_glyph(const StyleSpec& style, const GlyphSpec& content, int size) {
  if (size < 16) throw std::invalid_argument("render_glyph: size must be >= 16, got " + std::to_string(size));
  // Skeleton -> image space: scale about the centre, then slant (top leans
  // right for positive slant).
  std::vector<Polyline> strokes;
  for (const auto& line : content.skeleton) {
    Polyline t;
    for (const Point& p : line) {
      const double cx = (p.x - 0.5) * style.scale;
      const double cy = (p.y - 0.5) * style.scale;
      t.push_back({0.5 + cx - style.slant * cy, 0.5 + cy});
    }
    strokes.push_back(std::move(t));
  }
  const double half_width = 0.5 * style.stroke_thickness;
  const double ramp = 1.0 / size;
  Image img = Image::blank(static_cast<std::size_t>(size), static_cast<std::size_t>(size));
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Point p{(x + 0.5) / size, (y + 0.5) / size};
      double d = 1e9;
      for (const auto& line : strokes) {
        for (std::size_t i = 0; i + 1 < line.size(); ++i) d = std::min(d, segment_distance(p, line[i], line[i + 1]));
      }
      const double coverage = std::clamp((half_width + ramp - d) / ramp, 0.0, 1.0);
      img.pixels[static_cast<std::size_t>(y * size + x)] = 1.0 - style.darkness * coverage;
    }
  }
  return img;
}

// ---- partition ----

bool DatasetPartition::is_known_style(int s) const {
  return std::find(known_styles.begin(), known_styles.end(), s) != known_styles.end();
}

bool DatasetPartition::is_known_content(int c) const {
  return std::find(known_contents.begin(), known_contents.end(), c) != known_contents.end();
}

DatasetPartition make_partition(int n_styles, int n_contents, std::uint64_t seed) {
  if (n_styles < 4 || n_contents < 4) {
    throw std::invalid_argument("make_partition: need at least 4 styles and 4 contents, got " +
                                std::to_string(n_styles) + " and " + std::to_string(n_contents));
  }
  Rng rng(seed);
  auto split = [&rng](int n, std::vector<int>& known, std::vector<int>& novel) {
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    rng.shuffle(ids);
    const auto n_novel = static_cast<std::size_t>(n / 4);
    novel.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_novel));
    known.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_novel), ids.end());
    std::sort(novel.begin(), novel.end());
    std::sort(known.begin(), known.end());
  };
  DatasetPartition p;
  split(n_styles, p.known_styles, p.novel_styles);
  split(n_contents, p.known_contents, p.novel_contents);
  return p;
}

const char* cell_name(Cell cell) {
  switch (cell) {
    case Cell::D1: return "D1";
    case Cell::D2: return "D2";
    case Cell::D3: return "D3";
    case Cell::D4: return "D4";
  }
  return "?";
}

Cell cell_of(const DatasetPartition& p, int style, int content) {
  const bool ks = p.is_known_style(style), kc = p.is_known_content(content);
  if (ks && kc) return Cell::D1;
  if (ks) return Cell::D2;
  if (kc) return Cell::D3;
  return Cell::D4;
}

// ---- sampling ----

TripletSampler::TripletSampler(const DatasetPartition& partition, std::size_t n_targets, int r,
                               std::uint64_t seed)
    : partition_(partition), r_(r), seed_(seed) {
  if (r < 1) throw std::invalid_argument("reference count r must be positive");
  if (n_targets == 0) throw std::invalid_argument("N_t must be positive");
  if (static_cast<std::size_t>(r) > partition.known_contents.size() ||
      static_cast<std::size_t>(r) > partition.known_styles.size()) {
    throw CorpusError("reference count r=" + std::to_string(r) + " exceeds the available counterparts (" +
                      std::to_string(partition.known_contents.size()) + " known contents, " +
                      std::to_string(partition.known_styles.size()) + " known styles)");
  }
  Rng rng(mix_seed(seed, 0x7A26E7ULL));
  targets_.reserve(n_targets);
  for (std::size_t i = 0; i < n_targets; ++i) {
    const int s = partition.known_styles[rng.index(partition.known_styles.size())];
    const int c = partition.known_contents[rng.index(partition.known_contents.size())];
    targets_.emplace_back(s, c);
  }
}

std::vector<Triplet> TripletSampler::batch(std::size_t batch_size, std::uint64_t step) const {
  Rng rng(mix_seed(seed_, 0xBA7C0000ULL + step));
  std::vector<Triplet> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto [s, c] = targets_[rng.index(targets_.size())];
    Triplet t;
    t.style = s;
    t.content = c;
    // The target's own counterpart may be drawn.
    t.style_refs = {ReferenceSet::Kind::style, s, sample_distinct(partition_.known_contents, r_, rng)};
    t.content_refs = {ReferenceSet::Kind::content, c, sample_distinct(partition_.known_styles, r_, rng)};
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Triplet> sample_training_batch(const DatasetPartition& partition, std::size_t n_targets, int r,
                                           std::size_t batch, std::uint64_t seed) {
  return TripletSampler(partition, n_targets, r, seed).batch(batch, 0);
}

std::array<EvalSuite, 4> build_eval_sets(const DatasetPartition& p, int r, std::uint64_t seed,
                                         std::size_t per_suite) {
  if (r < 1) throw std::invalid_argument("reference count r must be positive");
  if (r > p.n_contents() - 1 || r > p.n_styles() - 1) {
    throw CorpusError("reference count r=" + std::to_string(r) + " exceeds the available counterparts (" +
                      std::to_string(p.n_contents() - 1) + " other contents, " +
                      std::to_string(p.n_styles() - 1) + " other styles)");
  }
  if (per_suite == 0) throw std::invalid_argument("build_eval_sets: empty suites requested");
  const std::array<Cell, 4> cells{Cell::D1, Cell::D2, Cell::D3, Cell::D4};
  std::array<EvalSuite, 4> suites;
  for (std::size_t k = 0; k < 4; ++k) {
    const Cell cell = cells[k];
    const auto& styles = (cell == Cell::D1 || cell == Cell::D2) ? p.known_styles : p.novel_styles;
    const auto& contents = (cell == Cell::D1 || cell == Cell::D3) ? p.known_contents : p.novel_contents;
    Rng rng(mix_seed(seed, 0xE7A10000ULL + k));
    suites[k].cell = cell;
    for (std::size_t i = 0; i < per_suite; ++i) {
      Triplet t;
      t.style = styles[rng.index(styles.size())];
      t.content = contents[rng.index(contents.size())];
      t.style_refs = {ReferenceSet::Kind::style, t.style, sample_distinct(iota_except(p.n_contents(), t.content), r, rng)};
      t.content_refs = {ReferenceSet::Kind::content, t.content,
                        sample_distinct(iota_except(p.n_styles(), t.style), r, rng)};
      suites[k].items.push_back(std::move(t));
    }
  }
  return suites;
}

// ---- corpus ----

std::string GlyphCorpus::image_filename(int style, int content) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "style%04d_content%04d.pgm", style, content);
  return buf;
}

GlyphCorpus GlyphCorpus::generate(int n_styles, int n_contents, int size, std::uint64_t seed) {
  if (static_cast<std::size_t>(n_contents) > alphabet_size()) {
    throw std::invalid_argument("at most " + std::to_string(alphabet_size()) + " contents are available");
  }
  GlyphCorpus c;
  c.seed_ = seed;
  c.n_styles_ = n_styles;
  c.n_contents_ = n_contents;
  c.size_ = size;
  c.partition_ = make_partition(n_styles, n_contents, mix_seed(seed, 0x9A27ULL));
  for (int s = 0; s < n_styles; ++s) c.styles_.push_back(style_spec(seed, s));
  std::vector<GlyphSpec> glyphs;
  for (int j = 0; j < n_contents; ++j) glyphs.push_back(glyph_spec(j));
  c.images_.reserve(static_cast<std::size_t>(n_styles * n_contents));
  for (int s = 0; s < n_styles; ++s) {
    for (int j = 0; j < n_contents; ++j) {
      Image img = render_glyph(c.styles_[static_cast<std::size_t>(s)], glyphs[static_cast<std::size_t>(j)], size);
      quantize_in_place(img);
      c.images_.push_back(std::move(img.pixels));
    }
  }
  return c;
}

void GlyphCorpus::export_to(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (int s = 0; s < n_styles_; ++s) {
    for (int j = 0; j < n_contents_; ++j) {
      Image img = Image::blank(static_cast<std::size_t>(size_), static_cast<std::size_t>(size_));
      const auto px = image(s, j);
      img.pixels.assign(px.begin(), px.end());
      write_netpbm(img, dir / image_filename(s, j));
    }
  }
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  if (!out) throw CorpusError("cannot write manifest in '" + dir.string() + "'");
  out << "emd-glyph-corpus 1\n";
  out << "seed " << seed_ << '\n';
  out << "styles " << n_styles_ << '\n';
  out << "contents " << n_contents_ << '\n';
  out << "size " << size_ << '\n';
  write_ids(out, "known_styles", partition_.known_styles);
  write_ids(out, "novel_styles", partition_.novel_styles);
  write_ids(out, "known_contents", partition_.known_contents);
  write_ids(out, "novel_contents", partition_.novel_contents);
  out.precision(17);
  for (const auto& s : styles_) {
    out << "style " << s.style_id << " thickness " << s.stroke_thickness << " slant " << s.slant << " scale "
        << s.scale << " darkness " << s.darkness << '\n';
  }
  if (!out) throw CorpusError("writing manifest in '" + dir.string() + "' failed");
}

GlyphCorpus GlyphCorpus::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw CorpusError("no manifest.txt in corpus directory '" + dir.string() + "'");
  GlyphCorpus c;
  std::string line;
  std::getline(in, line);
  if (line != "emd-glyph-corpus 1") throw CorpusError("manifest: unrecognized header '" + line + "'");
  bool have_seed = false;
  auto read_ids = [](std::istringstream& ls) {
    std::vector<int> v;
    int id;
    while (ls >> id) v.push_back(id);
    return v;
  };
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") {
      ls >> c.seed_;
      have_seed = true;
    } else if (key == "styles") {
      ls >> c.n_styles_;
    } else if (key == "contents") {
      ls >> c.n_contents_;
    } else if (key == "size") {
      ls >> c.size_;
    } else if (key == "known_styles") {
      c.partition_.known_styles = read_ids(ls);
    } else if (key == "novel_styles") {
      c.partition_.novel_styles = read_ids(ls);
    } else if (key == "known_contents") {
      c.partition_.known_contents = read_ids(ls);
    } else if (key == "novel_contents") {
      c.partition_.novel_contents = read_ids(ls);
    } else if (key == "style") {
      StyleSpec s;
      std::string k1, k2, k3, k4;
      ls >> s.style_id >> k1 >> s.stroke_thickness >> k2 >> s.slant >> k3 >> s.scale >> k4 >> s.darkness;
      if (!ls) throw CorpusError("manifest: malformed style line '" + line + "'");
      c.styles_.push_back(s);
    } else if (!key.empty()) {
      throw CorpusError("manifest: unknown key '" + key + "'");
    }
  }
  if (!have_seed || c.n_styles_ < 1 || c.n_contents_ < 1 || c.size_ < 1 ||
      c.partition_.n_styles() != c.n_styles_ || c.partition_.n_contents() != c.n_contents_ ||
      static_cast<int>(c.styles_.size()) != c.n_styles_) {
    throw CorpusError("manifest in '" + dir.string() + "' is incomplete or inconsistent");
  }
  auto check_cover = [&](const std::vector<int>& a, const std::vector<int>& b, int n, const char* axis) {
    std::vector<int> ids(a);
    ids.insert(ids.end(), b.begin(), b.end());
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < n; ++i) {
      if (ids[static_cast<std::size_t>(i)] != i) {
        throw CorpusError(std::string("manifest: ") + axis + " split is not a partition of 0.." + std::to_string(n - 1));
      }
    }
  };
  check_cover(c.partition_.known_styles, c.partition_.novel_styles, c.n_styles_, "style");
  check_cover(c.partition_.known_contents, c.partition_.novel_contents, c.n_contents_, "content");
  for (int i = 0; i < c.n_styles_; ++i) {
    const StyleSpec& s = c.styles_[static_cast<std::size_t>(i)];
    const bool ok = s.style_id == i && s.stroke_thickness >= kThicknessMin && s.stroke_thickness <= kThicknessMax &&
                    s.slant >= kSlantMin && s.slant <= kSlantMax && s.scale >= kScaleMin && s.scale <= kScaleMax &&
                    s.darkness >= kDarknessMin && s.darkness <= kDarknessMax;
    if (!ok) throw CorpusError("manifest: style line " + std::to_string(i) + " is out of order or out of range");
  }
  for (int s = 0; s < c.n_styles_; ++s) {
    for (int j = 0; j < c.n_contents_; ++j) {
      const auto path = dir / image_filename(s, j);
      Image img;
      try {
        img = read_netpbm(path);
      } catch (const std::exception& e) {
        throw CorpusError(e.what());
      }
      if (img.channels != 1 || img.height != static_cast<std::size_t>(c.size_) ||
          img.width != static_cast<std::size_t>(c.size_)) {
        throw CorpusError(path.string() + ": expected " + std::to_string(c.size_) + "x" + std::to_string(c.size_) +
                          " grayscale image");
      }
      c.images_.push_back(std::move(img.pixels));
    }
  }
  return c;
}

std::span<const double> GlyphCorpus::image(int style, int content) const {
  if (style < 0 || style >= n_styles_ || content < 0 || content >= n_contents_) {
    throw std::out_of_range("no image for style " + std::to_string(style) + ", content " + std::to_string(content));
  }
  return images_[static_cast<std::size_t>(style * n_contents_ + content)];
}

Tensor GlyphCorpus::reference_tensor(std::span<const ReferenceSet> sets) const {
  if (sets.empty()) throw std::invalid_argument("reference_tensor: no reference sets");
  const std::size_t r = sets.front().counterparts.size();
  const std::size_t plane = static_cast<std::size_t>(size_ * size_);
  std::vector<double> data;
  data.reserve(sets.size() * r * plane);
  for (const auto& set : sets) {
    if (set.counterparts.size() != r) throw ShapeError("reference_tensor: reference sets of unequal size");
    for (int other : set.counterparts) {
      const auto px = set.kind == ReferenceSet::Kind::style ? image(set.anchor, other) : image(other, set.anchor);
      data.insert(data.end(), px.begin(), px.end());
    }
  }
  return Tensor::from({sets.size(), r, static_cast<std::size_t>(size_), static_cast<std::size_t>(size_)},
                      std::move(data));
}

Tensor GlyphCorpus::style_reference_tensor(std::span<const Triplet> triplets) const {
  std::vector<ReferenceSet> sets;
  for (const auto& t : triplets) sets.push_back(t.style_refs);
  return reference_tensor(sets);
}

Tensor GlyphCorpus::content_reference_tensor(std::span<const Triplet> triplets) const {
  std::vector<ReferenceSet> sets;
  for (const auto& t : triplets) sets.push_back(t.content_refs);
  return reference_tensor(sets);
}

Tensor GlyphCorpus::target_tensor(std::span<const Triplet> triplets) const {
  if (triplets.empty()) throw std::invalid_argument("target_tensor: empty batch");
  std::vector<double> data;
  for (const auto& t : triplets) {
    const auto px = image(t.style, t.content);
    data.insert(data.end(), px.begin(), px.end());
  }
  return Tensor::from({triplets.size(), 1, static_cast<std::size_t>(size_), static_cast<std::size_t>(size_)},
                      std::move(data));
}

}  // namespace emd::glyph
