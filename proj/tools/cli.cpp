#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "emd/checkpoint.hpp"
#include "emd/trainer.hpp"

namespace emd::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusArgs {
  std::string out;
  int styles = 40, contents = 60, size = 64;
  std::uint64_t seed = 7;
};

struct TrainArgs {
  std::string corpus, out, log, resume;
  int r = 4, channels = 16;
  std::size_t nt = 20000, batch = 4;
  std::uint64_t steps = 2000, seed = 1;
  double lr = 2e-4;
  bool no_skips = false;
};

struct GenerateArgs {
  std::string ckpt, out;
  std::vector<std::string> style_refs, content_refs;
};

struct EvalArgs {
  std::string ckpt, corpus;
  int r = 0;
  std::uint64_t seed = 1;
  std::size_t per_suite = 64;
};

struct NstArgs {
  std::string style, content, ckpt, style2, out;
  std::vector<double> alphas{1.0};
};

struct NstTrainArgs {
  std::vector<std::string> styles, contents;
  std::string out, log, extractor;
  std::uint64_t steps = 500, seed = 1;
  std::size_t batch = 8;
  double lr = 1e-4;
  int channels = 3, base_channels = 8;
  bool decoder_only = false;
};

std::ofstream open_log(const std::string& path, bool append) {
  std::ofstream log(path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open log file '" + path + "'");
  if (!append) log << "step,loss,wall_ms\n";
  return log;
}

// Grayscale inputs are replicated into every channel.
Image to_channels(Image img, int channels, const std::string& path) {
  const auto c = static_cast<std::size_t>(channels);
  if (img.channels == c) return img;
  if (img.channels == 1) {
    Image out = Image::blank(img.height, img.width, c);
    for (std::size_t k = 0; k < c; ++k) std::copy(img.pixels.begin(), img.pixels.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(k * img.pixels.size()));
    return out;
  }
  throw std::runtime_error(path + ": has " + std::to_string(img.channels) + " channels, the network expects " +
                           std::to_string(channels));
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + " produced a non-finite value");
  }
}

std::string alpha_path(const std::string& out, double alpha) {
  const std::filesystem::path p(out);
  char buf[32];
  std::snprintf(buf, sizeof buf, "_alpha%g", alpha);
  return (p.parent_path() / (p.stem().string() + buf + p.extension().string())).string();
}

void cmd_corpus(const CorpusArgs& a, std::ostream& out) {
  if (a.styles < 4 || a.contents < 4) throw UsageError("--styles and --contents must be at least 4");
  if (a.size < 16) throw UsageError("--size must be at least 16");
  if (static_cast<std::size_t>(a.contents) > glyph::alphabet_size()) {
    throw UsageError("--contents must be at most " + std::to_string(glyph::alphabet_size()));
  }
  const auto corpus = glyph::GlyphCorpus::generate(a.styles, a.contents, a.size, a.seed);
  corpus.export_to(a.out);
  const auto& p = corpus.partition();
  out << "wrote " << a.styles * a.contents << " images to " << a.out << " (styles " << p.known_styles.size()
      << " known / " << p.novel_styles.size() << " novel, contents " << p.known_contents.size() << " known / "
      << p.novel_contents.size() << " novel)\n";
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.r < 1) throw UsageError("--r must be positive");
  if (a.nt < 1 || a.batch < 1) throw UsageError("--nt and --batch must be positive");
  if (!(a.lr > 0.0)) throw UsageError("--lr must be positive");
  const auto corpus = glyph::GlyphCorpus::load(a.corpus);
  TrainConfig tc;
  tc.lr = a.lr;
  tc.batch = a.batch;
  tc.n_targets = a.nt;
  tc.steps = a.steps;
  tc.seed = a.seed;
  tc.refs = a.r;

  std::optional<FontNetArchive> archive;
  if (!a.resume.empty()) {
    archive.emplace(restore_font_net(load_checkpoint(a.resume), a.lr));
    if (!archive->adam) throw std::runtime_error(a.resume + ": holds no optimizer state to resume from");
    if (archive->net.config().refs != a.r || archive->net.config().image_size != corpus.size()) {
      throw std::runtime_error(a.resume + ": checkpoint was trained with r=" +
                               std::to_string(archive->net.config().refs) + " on " +
                               std::to_string(archive->net.config().image_size) + " px images");
    }
  } else {
    FontNetConfig cfg;
    cfg.image_size = corpus.size();
    cfg.base_channels = a.channels;
    cfg.refs = a.r;
    cfg.use_skips = !a.no_skips;
    FontNet net(cfg, mix_seed(a.seed, 1));
    AdamState adam(net.params(), AdamConfig{a.lr});
    archive.emplace(FontNetArchive{std::move(net), std::move(adam), 0});
  }
  const std::string log_path = a.log.empty() ? a.out + ".log" : a.log;
  std::ofstream log = open_log(log_path, !a.resume.empty());
  const auto records = train_font_net(archive->net, *archive->adam, corpus, tc, archive->step, &log);
  save_checkpoint(font_net_archive(archive->net, &*archive->adam, std::max(a.steps, archive->step)), a.out);
  out << "trained " << records.size() << " steps";
  if (!records.empty()) out << ", last loss " << records.back().loss;
  out << "; checkpoint " << a.out << ", log " << log_path << "\n";
}

Tensor load_reference_stack(const std::vector<std::string>& files, const FontNetConfig& cfg, const char* what) {
  const auto n = static_cast<std::size_t>(cfg.image_size);
  if (files.size() != static_cast<std::size_t>(cfg.refs)) {
    throw std::runtime_error(std::string(what) + ": expected r=" + std::to_string(cfg.refs) + " images of " +
                             std::to_string(n) + "x" + std::to_string(n) + " px, got " +
                             std::to_string(files.size()) + " files");
  }
  std::vector<double> data;
  for (const auto& f : files) {
    const Image img = read_netpbm(f);
    if (img.channels != 1 || img.height != n || img.width != n) {
      throw std::runtime_error(f + ": expected a " + std::to_string(n) + "x" + std::to_string(n) +
                               " grayscale image (checkpoint r=" + std::to_string(cfg.refs) + "), got " +
                               std::to_string(img.width) + "x" + std::to_string(img.height) + " with " +
                               std::to_string(img.channels) + " channels");
    }
    data.insert(data.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor::from({1, files.size(), n, n}, std::move(data));
}

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  auto archive = restore_font_net(load_checkpoint(a.ckpt));
  const FontNetConfig& cfg = archive.net.config();
  const Tensor style = load_reference_stack(a.style_refs, cfg, "--style-refs");
  const Tensor content = load_reference_stack(a.content_refs, cfg, "--content-refs");
  Graph g(Graph::Mode::inference);
  const Tensor image = archive.net.forward_generate(g, style, content, ops::NormMode::eval);
  require_finite(image, "generation");
  write_netpbm(tensor_to_image(image), a.out);
  out << "wrote " << a.out << "\n";
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto archive = restore_font_net(load_checkpoint(a.ckpt));
  const auto corpus = glyph::GlyphCorpus::load(a.corpus);
  const int r = a.r == 0 ? archive.net.config().refs : a.r;
  if (r != archive.net.config().refs) {
    throw std::runtime_error("checkpoint was trained with r=" + std::to_string(archive.net.config().refs) +
                             ", --r is " + std::to_string(r));
  }
  if (corpus.size() != archive.net.config().image_size) {
    throw std::runtime_error("checkpoint expects " + std::to_string(archive.net.config().image_size) +
                             " px images, corpus has " + std::to_string(corpus.size()));
  }
  if (a.per_suite < 1) throw UsageError("--per-suite must be positive");
  const auto suites = glyph::build_eval_sets(corpus.partition(), r, a.seed, a.per_suite);
  const auto metrics = evaluate(archive.net, corpus, suites);
  out << "set,l1,rmse,pdar\n";
  char buf[128];
  for (const auto& m : metrics) {
    if (!std::isfinite(m.l1) || !std::isfinite(m.rmse) || !std::isfinite(m.pdar)) {
      throw NumericError(std::string("non-finite metric on ") + glyph::cell_name(m.cell));
    }
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", glyph::cell_name(m.cell), m.l1, m.rmse, m.pdar);
    out << buf;
  }
}

void cmd_nst(const NstArgs& a, std::ostream& out) {
  for (double alpha : a.alphas) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("--alpha values must lie in [0, 1], got " + std::to_string(alpha));
  }
  const nst::NstNet net = restore_nst(load_checkpoint(a.ckpt));
  const int c = net.config().channels;
  const Tensor style = image_to_tensor(to_channels(read_netpbm(a.style), c, a.style));
  const Tensor content = image_to_tensor(to_channels(read_netpbm(a.content), c, a.content));
  Tensor style2;
  if (!a.style2.empty()) style2 = image_to_tensor(to_channels(read_netpbm(a.style2), c, a.style2));
  for (double alpha : a.alphas) {
    Graph g(Graph::Mode::inference);
    const Tensor image = style2.defined() ? net.forward_interpolate(g, style, style2, content, alpha)
                                          : net.forward_tradeoff(g, style, content, alpha);
    require_finite(image, "style transfer");
    const std::string path = a.alphas.size() == 1 ? a.out : alpha_path(a.out, alpha);
    write_netpbm(tensor_to_image(image), path);
    out << "wrote " << path << "\n";
  }
}

void cmd_nst_train(const NstTrainArgs& a, std::ostream& out) {
  if (a.batch < 1 || !(a.lr > 0.0)) throw UsageError("--batch and --lr must be positive");
  if (a.channels != 1 && a.channels != 3) throw UsageError("--channels must be 1 or 3");
  auto load_all = [&](const std::vector<std::string>& files) {
    std::vector<Tensor> out;
    for (const auto& f : files) out.push_back(image_to_tensor(to_channels(read_netpbm(f), a.channels, f)));
    return out;
  };
  const auto styles = load_all(a.styles);
  const auto contents = load_all(a.contents);
  nst::NstConfig cfg;
  cfg.channels = a.channels;
  cfg.base_channels = a.base_channels;
  nst::NstNet net(cfg, mix_seed(a.seed, 1));
  const nst::FeatureExtractor extractor = a.extractor.empty()
                                              ? nst::FeatureExtractor(a.channels, 8, mix_seed(a.seed, 2))
                                              : nst::FeatureExtractor(load_checkpoint(a.extractor));
  NstTrainConfig tc;
  tc.lr = a.lr;
  tc.batch = a.batch;
  tc.steps = a.steps;
  tc.seed = a.seed;
  tc.decoder_only = a.decoder_only;
  AdamState adam(a.decoder_only ? net.decoder_params() : net.params(), AdamConfig{a.lr});
  const std::string log_path = a.log.empty() ? a.out + ".log" : a.log;
  std::ofstream log = open_log(log_path, false);
  const auto records = train_nst(net, adam, extractor, styles, contents, tc, &log);
  save_checkpoint(nst_archive(net), a.out);
  out << "trained " << records.size() << " steps";
  if (!records.empty()) out << ", last loss " << records.back().loss;
  out << "; checkpoint " << a.out << ", log " << log_path << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Style/content factorized image generation"};
  app.name("emd");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  CorpusArgs corpus;
  auto* c = app.add_subcommand("corpus", "Render the synthetic glyph corpus");
  c->add_option("--out", corpus.out, "Output directory")->required();
  c->add_option("--styles", corpus.styles, "Number of styles");
  c->add_option("--contents", corpus.contents, "Number of contents");
  c->add_option("--size", corpus.size, "Image side in pixels");
  c->add_option("--seed", corpus.seed, "Corpus seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the typeface transfer network");
  t->add_option("--corpus", train.corpus, "Corpus directory")->required();
  t->add_option("--out", train.out, "Checkpoint to write")->required();
  t->add_option("--r", train.r, "References per set");
  t->add_option("--nt", train.nt, "Number of training targets");
  t->add_option("--steps", train.steps, "Total optimizer steps");
  t->add_option("--lr", train.lr, "Adam learning rate");
  t->add_option("--seed", train.seed, "Initialization and sampling seed");
  t->add_option("--batch", train.batch, "Triplets per step");
  t->add_option("--channels", train.channels, "Base channel count C");
  t->add_option("--log", train.log, "Training log (default: <out>.log)");
  t->add_option("--resume", train.resume, "Continue from a checkpoint written by train");
  t->add_flag("--no-skips", train.no_skips, "Feed zeros instead of the skip connections");

  GenerateArgs gen;
  auto* gcmd = app.add_subcommand("generate", "Generate one glyph from style and content references");
  gcmd->add_option("--ckpt", gen.ckpt, "Typeface checkpoint")->required();
  gcmd->add_option("--style-refs", gen.style_refs, "r images sharing the wanted style")->required();
  gcmd->add_option("--content-refs", gen.content_refs, "r images sharing the wanted content")->required();
  gcmd->add_option("--out", gen.out, "Output PGM")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "L1/RMSE/PDAR on the D1..D4 suites as CSV");
  e->add_option("--ckpt", ev.ckpt, "Typeface checkpoint")->required();
  e->add_option("--corpus", ev.corpus, "Corpus directory")->required();
  e->add_option("--r", ev.r, "References per set (default: the checkpoint's)");
  e->add_option("--seed", ev.seed, "Suite sampling seed");
  e->add_option("--per-suite", ev.per_suite, "Targets per suite");

  NstArgs nst;
  auto* n = app.add_subcommand("nst", "Stylize an image, optionally sweeping alpha");
  n->add_option("--style", nst.style, "Style image (PGM/PPM)")->required();
  n->add_option("--content", nst.content, "Content image (PGM/PPM)")->required();
  n->add_option("--ckpt", nst.ckpt, "Style transfer checkpoint")->required();
  n->add_option("--alpha", nst.alphas, "Trade-off weight(s) in [0, 1], comma separated")->delimiter(',');
  n->add_option("--interp-style2", nst.style2, "Second style: interpolate between the two styles");
  n->add_option("--out", nst.out, "Output image; sweeps append _alpha<value>")->required();

  NstTrainArgs nt;
  auto* nt_cmd = app.add_subcommand("nst-train", "Train the style transfer network");
  nt_cmd->add_option("--styles", nt.styles, "Style images")->required();
  nt_cmd->add_option("--contents", nt.contents, "Content images")->required();
  nt_cmd->add_option("--out", nt.out, "Checkpoint to write")->required();
  nt_cmd->add_option("--steps", nt.steps, "Optimizer steps");
  nt_cmd->add_option("--lr", nt.lr, "Adam learning rate");
  nt_cmd->add_option("--batch", nt.batch, "Pairs per step");
  nt_cmd->add_option("--seed", nt.seed, "Initialization and sampling seed");
  nt_cmd->add_option("--channels", nt.channels, "Image channels (1 or 3)");
  nt_cmd->add_option("--base-channels", nt.base_channels, "Base channel count c");
  nt_cmd->add_option("--extractor", nt.extractor, "Loss network weights (checkpoint format)");
  nt_cmd->add_option("--log", nt.log, "Training log (default: <out>.log)");
  nt_cmd->add_flag("--decoder-only", nt.decoder_only, "Keep both encoders fixed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c->parsed()) cmd_corpus(corpus, out);
    if (t->parsed()) cmd_train(train, out);
    if (gcmd->parsed()) cmd_generate(gen, out);
    if (e->parsed()) cmd_eval(ev, out);
    if (n->parsed()) cmd_nst(nst, out);
    if (nt_cmd->parsed()) cmd_nst_train(nt, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return kUsage;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return kNumericError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kDataError;
  }
  return kOk;
}

}  // namespace emd::cli
