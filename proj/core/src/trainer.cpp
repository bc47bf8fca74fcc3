#include "emd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "emd/losses.hpp"

namespace emd {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::string describe_batch(const std::vector<glyph::Triplet>& batch) {
  std::ostringstream out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out << (i ? " " : "") << "(style " << batch[i].style << ", content " << batch[i].content << ")";
  }
  return out.str();
}

double meta_value(const NamedTensors& tensors, const std::string& name, std::size_t index) {
  if (!tensors.contains(name)) throw std::invalid_argument("archive has no '" + name + "' tensor");
  const Tensor& t = tensors.get(name);
  if (t.rank() != 1 || t.numel() <= index) {
    throw std::invalid_argument("archive tensor '" + name + "' has shape " + shape_string(t.shape()));
  }
  return t.data()[index];
}

// Checked before building a network from meta fields, so that a corrupted
// field cannot request a network far larger than the archive itself.
void expect_shape(const NamedTensors& tensors, const std::string& name, const Shape& shape, const char* meta) {
  if (!tensors.contains(name) || tensors.get(name).shape() != shape) {
    throw std::invalid_argument(std::string("archive does not match its '") + meta + "' fields: expected '" + name +
                                "' of shape " + shape_string(shape));
  }
}

int meta_int(const NamedTensors& tensors, const std::string& name, std::size_t index) {
  const double v = meta_value(tensors, name, index);
  if (v != std::floor(v) || v < 0.0 || v > 1e7) {
    throw std::invalid_argument("archive tensor '" + name + "' holds a non-integer field");
  }
  return static_cast<int>(v);
}

void copy_into(const Tensor& dst, const Tensor& src, const std::string& name) {
  if (src.shape() != dst.shape()) {
    throw ShapeError("tensor '" + name + "' has shape " + shape_string(src.shape()) + ", expected " +
                     shape_string(dst.shape()));
  }
  Tensor d = dst;
  std::copy(src.data().begin(), src.data().end(), d.mutable_data().begin());
}

Tensor stack_images(const std::vector<Tensor>& images, const std::vector<std::size_t>& picks) {
  const Shape& first = images[picks.front()].shape();
  std::vector<double> data;
  for (std::size_t i : picks) {
    const Tensor& t = images[i];
    if (t.shape() != first) {
      throw ShapeError("train_nst: images " + shape_string(t.shape()) + " and " + shape_string(first) +
                       " differ in shape");
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor::from({picks.size(), first[1], first[2], first[3]}, std::move(data));
}

}  // namespace

// ---- optimizer ----

AdamState::AdamState(const NamedTensors& params, AdamConfig cfg) : config(cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  for (const auto& [name, t] : params) {
    m.add(name, Tensor::zeros(t.shape()));
    v.add(name, Tensor::zeros(t.shape()));
  }
}

void adam_step(const NamedTensors& params, AdamState& state) {
  if (params.size() != state.m.size()) throw std::invalid_argument("adam_step: optimizer built for other parameters");
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw std::invalid_argument("adam_step: parameter '" + name + "' has no gradient");
    if (!state.m.contains(name) || state.m.get(name).shape() != t.shape()) {
      throw ShapeError("adam_step: no matching moment for '" + name + "'");
    }
  }
  ++state.step;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, t] : params) {
    Tensor p = t;
    Tensor mt = state.m.get(name);
    Tensor vt = state.v.get(name);
    auto x = p.mutable_data();
    auto m = mt.mutable_data();
    auto v = vt.mutable_data();
    const auto g = t.grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      x[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.epsilon);
    }
  }
}

double clip_grad_norm(const NamedTensors& params, double max_norm) {
  double ss = 0.0;
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& [name, t] : params) {
      for (double& g : t.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void write_log_line(std::ostream& out, const StepRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.1f", static_cast<unsigned long long>(r.step), r.loss, r.wall_ms);
  out << buf << '\n';
}

// ---- typeface training ----

Tensor batch_loss(Graph& g, FontNet& net, const glyph::GlyphCorpus& corpus, const std::vector<glyph::Triplet>& batch,
                  ops::NormMode mode) {
  const Tensor style = corpus.style_reference_tensor(batch);
  const Tensor content = corpus.content_reference_tensor(batch);
  const Tensor target = corpus.target_tensor(batch);
  const Tensor generated = net.forward_generate(g, style, content, mode);
  return losses::weighted_l1_loss(g, generated, target);
}

double train_step(FontNet& net, AdamState& adam, const glyph::GlyphCorpus& corpus,
                  const std::vector<glyph::Triplet>& batch, double clip_norm) {
  const NamedTensors& params = net.params();
  params.zero_grad();
  Graph g;
  const Tensor loss = batch_loss(g, net, corpus, batch, ops::NormMode::train);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite loss on batch " + describe_batch(batch));
  g.backward(loss);
  try {
    clip_grad_norm(params, clip_norm);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " on batch " + describe_batch(batch));
  }
  adam_step(params, adam);
  round_to_float(params);
  round_to_float(net.buffers());
  round_to_float(adam.m);
  round_to_float(adam.v);
  return value;
}

std::vector<StepRecord> train_font_net(FontNet& net, AdamState& adam, const glyph::GlyphCorpus& corpus,
                                       const TrainConfig& config, std::uint64_t start_step, std::ostream* log) {
  if (config.batch == 0) throw std::invalid_argument("batch size must be positive");
  if (config.refs != net.config().refs) {
    throw std::invalid_argument("network expects r=" + std::to_string(net.config().refs) + ", config has r=" +
                                std::to_string(config.refs));
  }
  if (corpus.size() != net.config().image_size) {
    throw std::invalid_argument("network expects " + std::to_string(net.config().image_size) +
                                " px images, corpus has " + std::to_string(corpus.size()));
  }
  const glyph::TripletSampler sampler(corpus.partition(), config.n_targets, config.refs, config.seed);
  std::vector<StepRecord> records;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t step = start_step; step < config.steps; ++step) {
    const auto batch = sampler.batch(config.batch, step);
    double loss;
    try {
      loss = train_step(net, adam, corpus, batch, config.clip_norm);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    records.push_back({step, loss, elapsed_ms(t0)});
    if (log) {
      write_log_line(*log, records.back());
      log->flush();
    }
  }
  return records;
}

std::array<SuiteMetrics, 4> evaluate(FontNet& net, const glyph::GlyphCorpus& corpus,
                                     const std::array<glyph::EvalSuite, 4>& suites, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("evaluate: chunk must be positive");
  std::array<SuiteMetrics, 4> out;
  for (std::size_t k = 0; k < suites.size(); ++k) {
    const auto& items = suites[k].items;
    if (items.empty()) throw std::invalid_argument(std::string("evaluate: suite ") + glyph::cell_name(suites[k].cell) + " is empty");
    SuiteMetrics& m = out[k];
    m.cell = suites[k].cell;
    for (std::size_t begin = 0; begin < items.size(); begin += chunk) {
      const std::span<const glyph::Triplet> part(items.data() + begin, std::min(chunk, items.size() - begin));
      Graph g(Graph::Mode::inference);
      const Tensor generated = net.forward_generate(g, corpus.style_reference_tensor(part),
                                                    corpus.content_reference_tensor(part), ops::NormMode::eval);
      const Tensor target = corpus.target_tensor(part);
      const std::size_t plane = target.numel() / part.size();
      for (std::size_t i = 0; i < part.size(); ++i) {
        const auto a = generated.data().subspan(i * plane, plane);
        const auto b = target.data().subspan(i * plane, plane);
        m.l1 += losses::l1_metric(a, b);
        m.rmse += losses::rmse_metric(a, b);
        m.pdar += losses::pdar_metric(a, b);
      }
    }
    m.count = items.size();
    const double n = static_cast<double>(m.count);
    m.l1 /= n;
    m.rmse /= n;
    m.pdar /= n;
  }
  return out;
}

// ---- model archives ----

NamedTensors font_net_archive(const FontNet& net, const AdamState* adam, std::uint64_t step) {
  const FontNetConfig& c = net.config();
  NamedTensors out;
  out.add("meta.font_net", Tensor::from({4}, {static_cast<double>(c.image_size), static_cast<double>(c.base_channels),
                                              static_cast<double>(c.refs), c.use_skips ? 1.0 : 0.0}));
  for (const auto& [name, t] : net.params()) out.add(name, t);
  for (const auto& [name, t] : net.buffers()) out.add(name, t);
  if (adam) {
    out.add("meta.train", Tensor::from({2}, {static_cast<double>(step), static_cast<double>(adam->step)}));
    for (const auto& [name, t] : adam->m) out.add("adam.m." + name, t);
    for (const auto& [name, t] : adam->v) out.add("adam.v." + name, t);
  }
  return out;
}

FontNetArchive restore_font_net(const NamedTensors& tensors, double lr) {
  FontNetConfig c;
  c.image_size = meta_int(tensors, "meta.font_net", 0);
  c.base_channels = meta_int(tensors, "meta.font_net", 1);
  c.refs = meta_int(tensors, "meta.font_net", 2);
  c.use_skips = meta_int(tensors, "meta.font_net", 3) != 0;
  c.validate();
  const auto ch = c.encoder_channels();
  const std::size_t k = c.code_size(), refs = static_cast<std::size_t>(c.refs);
  expect_shape(tensors, "style_enc.0.kernel", {ch[0], refs, 5, 5}, "meta.font_net");
  expect_shape(tensors, "style_enc." + std::to_string(ch.size() - 1) + ".bias", {k}, "meta.font_net");
  expect_shape(tensors, "mixer.w", {k, k, k}, "meta.font_net");
  FontNetArchive out{FontNet(c, 0), std::nullopt, 0};
  out.net.load(tensors);
  if (tensors.contains("meta.train")) {
    out.step = static_cast<std::uint64_t>(meta_int(tensors, "meta.train", 0));
    AdamState adam(out.net.params(), AdamConfig{lr});
    adam.step = static_cast<std::uint64_t>(meta_int(tensors, "meta.train", 1));
    for (const auto& [name, t] : out.net.params()) {
      for (const char* kind : {"adam.m.", "adam.v."}) {
        const std::string key = kind + name;
        if (!tensors.contains(key)) throw std::invalid_argument("archive has no '" + key + "' tensor");
        copy_into(kind[5] == 'm' ? adam.m.get(name) : adam.v.get(name), tensors.get(key), key);
      }
    }
    out.adam = std::move(adam);
  }
  return out;
}

NamedTensors nst_archive(const nst::NstNet& net) {
  const nst::NstConfig& c = net.config();
  NamedTensors out;
  out.add("meta.nst", Tensor::from({3}, {static_cast<double>(c.channels), static_cast<double>(c.base_channels),
                                         static_cast<double>(c.res_blocks)}));
  for (const auto& [name, t] : net.params()) out.add(name, t);
  return out;
}

nst::NstNet restore_nst(const NamedTensors& tensors) {
  nst::NstConfig c;
  c.channels = meta_int(tensors, "meta.nst", 0);
  c.base_channels = meta_int(tensors, "meta.nst", 1);
  c.res_blocks = meta_int(tensors, "meta.nst", 2);
  c.validate();
  const auto base = static_cast<std::size_t>(c.base_channels), mix = c.mix_channels();
  expect_shape(tensors, "content_enc.conv0.kernel", {base, static_cast<std::size_t>(c.channels), 5, 5}, "meta.nst");
  if (c.res_blocks > 0) {
    expect_shape(tensors, "dec.res" + std::to_string(c.res_blocks - 1) + ".0.kernel", {mix, mix, 3, 3}, "meta.nst");
  }
  nst::NstNet net(c, 0);
  net.load(tensors);
  return net;
}

// ---- style transfer training ----

std::vector<StepRecord> train_nst(nst::NstNet& net, AdamState& adam, const nst::FeatureExtractor& extractor,
                                  const std::vector<Tensor>& styles, const std::vector<Tensor>& contents,
                                  const NstTrainConfig& config, std::ostream* log) {
  if (styles.empty() || contents.empty()) throw std::invalid_argument("train_nst: need style and content images");
  if (config.batch == 0) throw std::invalid_argument("batch size must be positive");
  const NamedTensors& trained = config.decoder_only ? net.decoder_params() : net.params();
  // Frozen encoders are left off the tape entirely.
  std::vector<Tensor> frozen;
  if (config.decoder_only) {
    for (const auto& [name, t] : net.params()) {
      if (!net.decoder_params().contains(name)) frozen.push_back(t);
    }
  }
  for (Tensor& t : frozen) t.set_requires_grad(false);
  std::vector<StepRecord> records;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t step = 0; step < config.steps; ++step) {
      Rng rng(mix_seed(config.seed, 0x4E570000ULL + step));
      std::vector<std::size_t> si, ci;
      for (std::size_t b = 0; b < config.batch; ++b) {
        si.push_back(rng.index(styles.size()));
        ci.push_back(rng.index(contents.size()));
      }
      const Tensor style = stack_images(styles, si);
      const Tensor content = stack_images(contents, ci);
      trained.zero_grad();
      Graph g;
      const Tensor generated = net.forward(g, style, content);
      const nst::NstLoss loss = nst::nst_objective(g, extractor, generated, content, style, config.weights);
      const double value = loss.total.item();
      if (!std::isfinite(value)) throw NumericError("step " + std::to_string(step) + ": non-finite style transfer loss");
      g.backward(loss.total);
      adam_step(trained, adam);
      round_to_float(trained);
      records.push_back({step, value, elapsed_ms(t0)});
      if (log) {
        write_log_line(*log, records.back());
        log->flush();
      }
    }
  } catch (...) {
    for (Tensor& t : frozen) t.set_requires_grad(true);
    throw;
  }
  for (Tensor& t : frozen) t.set_requires_grad(true);
  return records;
}

}  // namespace emd
