#include "drakes/denoiser.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "drakes/config.hpp"

namespace drakes {

void ParameterSet::add(std::string name, ad::Array value) { params_.push_back({std::move(name), std::move(value)}); }

std::size_t ParameterSet::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

const ad::Array& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw Error("ParameterSet: no parameter named '" + name + "'");
}

ad::Array& ParameterSet::get(const std::string& name) {
  return const_cast<ad::Array&>(static_cast<const ParameterSet&>(*this).get(name));
}

BoundParams Denoiser::bind(ad::Tape* tape) const {
  BoundParams out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape && !frozen_ ? tape->variable(p.value) : ad::constant(p.value));
  return out;
}

std::unique_ptr<Denoiser> Denoiser::clone_frozen() const {
  auto copy = clone();
  copy->frozen_ = true;
  return copy;
}

ad::Var Denoiser::predict_x0(const BoundParams& params, const ad::Var& relaxed, std::span<const double> times,
                             std::span<const int> labels) const {
  const std::size_t s = vocab_.states();
  const std::size_t m = seq_.length;
  if (relaxed.shape().size() != 3 || relaxed.dim(1) != m || relaxed.dim(2) != s) {
    throw Error("predict_x0: expected relaxed state of shape (B," + std::to_string(m) + "," + std::to_string(s) +
                "), got " + ad::to_string(relaxed.shape()));
  }
  const std::size_t b = relaxed.dim(0);
  if (times.size() != b) throw Error("predict_x0: need one time per batch element");
  if (!labels.empty() && labels.size() != b) throw Error("predict_x0: need one label per batch element");
  const auto& v = relaxed.value().values;
  for (std::size_t r = 0; r < b * m; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      const double x = v[r * s + j];
      if (!(x >= -1e-6)) throw Error("predict_x0: input has a negative or NaN simplex coordinate");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw Error("predict_x0: input position " + std::to_string(r % m) + " sums to " + std::to_string(total) +
                  ", not 1");
    }
  }
  if (params.size() != params_.size()) throw Error("predict_x0: bound parameter count mismatch");
  return forward(params, relaxed, times, labels);
}

ad::Array Denoiser::predict(const std::vector<TokenSeq>& states, double t, std::span<const int> labels) const {
  const std::vector<double> times(states.size(), t);
  const auto bound = bind(nullptr);
  return predict_x0(bound, ad::constant(one_hot_batch(states, vocab_.states())), times, labels).value();
}

namespace {

ad::Array uniform_init(ad::Shape shape, double bound, Rng& rng) {
  ad::Array a(std::move(shape));
  for (double& v : a.values) v = (2.0 * rng.uniform() - 1.0) * bound;
  return a;
}

}  // namespace

MlpDenoiser::MlpDenoiser(Vocabulary vocab, SequenceSpec seq, MlpDenoiserConfig config, std::uint64_t seed)
    : Denoiser(vocab, seq), config_(config) {
  if (config_.width < 2 || config_.width % 2 != 0) throw Error("MlpDenoiser: width must be a positive even number");
  if (config_.blocks < 0) throw Error("MlpDenoiser: negative block count");
  Rng rng(seed);
  const std::size_t d = config_.width;
  const std::size_t s = vocab.states();
  const std::size_t m = seq.length;
  const std::size_t n = vocab.n_tokens;
  params_.add("tok_emb", uniform_init({s, d}, 1.0 / std::sqrt(double(s)), rng));
  params_.add("pos_emb", uniform_init({m, d}, 1.0 / std::sqrt(double(m)), rng));
  params_.add("time_w", uniform_init({d, d}, 1.0 / std::sqrt(double(d)), rng));
  params_.add("time_b", ad::Array({d}, 0.0));
  if (config_.n_labels > 0) {
    params_.add("label_emb", uniform_init({std::size_t(config_.n_labels), d}, 1.0 / std::sqrt(double(config_.n_labels)), rng));
  }
  for (int blk = 0; blk < config_.blocks; ++blk) {
    const std::string p = "block" + std::to_string(blk) + ".";
    params_.add(p + "mix_w", uniform_init({m, m}, 1.0 / std::sqrt(double(m)), rng));
    params_.add(p + "w1", uniform_init({d, d}, 1.0 / std::sqrt(double(d)), rng));
    params_.add(p + "b1", ad::Array({d}, 0.0));
    params_.add(p + "w2", uniform_init({d, d}, 1.0 / std::sqrt(double(d)), rng));
    params_.add(p + "b2", ad::Array({d}, 0.0));
  }
  params_.add("out_w", ad::Array({d, n}, 0.0));
  params_.add("out_b", ad::Array({n}, 0.0));
}

nlohmann::json MlpDenoiser::architecture() const {
  return {{"width", config_.width}, {"blocks", config_.blocks}, {"n_labels", config_.n_labels}, {"horizon", config_.horizon}};
}

void MlpDenoiser::clear_label_embedding() {
  if (config_.n_labels == 0) return;
  auto& e = params_.get("label_emb");
  std::fill(e.values.begin(), e.values.end(), 0.0);
}

ad::Var MlpDenoiser::forward(const BoundParams& p, const ad::Var& relaxed, std::span<const double> times,
                             std::span<const int> labels) const {
  using namespace ad;
  const std::size_t b = relaxed.dim(0);
  const std::size_t d = config_.width;
  std::size_t i = 0;
  const Var& tok_emb = p[i++];
  const Var& pos_emb = p[i++];
  const Var& time_w = p[i++];
  const Var& time_b = p[i++];

  Var h = add(matmul(relaxed, tok_emb), pos_emb);

  // Sinusoidal features over frequencies spanning 1..100 per unit horizon.
  Array feats({b, 1, d});
  const std::size_t half = d / 2;
  for (std::size_t r = 0; r < b; ++r) {
    const double t = times[r] / config_.horizon;
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = 100.0 * std::exp(-std::log(100.0) * double(j) / double(half));
      feats[r * d + j] = std::sin(t * freq);
      feats[r * d + half + j] = std::cos(t * freq);
    }
  }
  h = add(h, tanh(add(matmul(constant(std::move(feats)), time_w), time_b)));

  if (config_.n_labels > 0) {
    const Var& label_emb = p[i++];
    if (!labels.empty()) {
      Array onehot({b, 1, std::size_t(config_.n_labels)}, 0.0);
      for (std::size_t r = 0; r < b; ++r) {
        if (labels[r] < 0 || labels[r] >= config_.n_labels) throw Error("MlpDenoiser: label out of range");
        onehot[r * config_.n_labels + labels[r]] = 1.0;
      }
      h = add(h, matmul(constant(std::move(onehot)), label_emb));
    }
  } else if (!labels.empty()) {
    throw Error("MlpDenoiser: model has no condition embedding");
  }

  for (int blk = 0; blk < config_.blocks; ++blk) {
    const Var& mix_w = p[i++];
    const Var& w1 = p[i++];
    const Var& b1 = p[i++];
    const Var& w2 = p[i++];
    const Var& b2 = p[i++];
    h = add(h, matmul(mix_w, h));
    const Var z = tanh(add(matmul(h, w1), b1));
    h = add(h, add(matmul(z, w2), b2));
  }
  const Var& out_w = p[i++];
  const Var& out_b = p[i++];
  return softmax(add(matmul(h, out_w), out_b));
}

TabularDenoiser::TabularDenoiser(Vocabulary vocab, int steps, double horizon)
    : Denoiser(vocab, SequenceSpec(1)), steps_(steps), horizon_(horizon) {
  if (steps < 1) throw Error("TabularDenoiser: need at least one step");
  params_.add("logits", ad::Array({std::size_t(steps), std::size_t(vocab.n_tokens)}, 0.0));
}

TabularDenoiser::TabularDenoiser(Vocabulary vocab, const ad::Array& rows, double horizon)
    : TabularDenoiser(vocab, rows.rank() == 2 ? int(rows.dim(0)) : 0, horizon) {
  if (rows.rank() != 2 || rows.dim(1) != std::size_t(vocab.n_tokens)) {
    throw Error("TabularDenoiser: rows must have shape (K, N)");
  }
  auto& logits = params_.get("logits");
  for (std::size_t k = 0; k < rows.dim(0); ++k) {
    double total = 0.0;
    for (int y = 0; y < vocab.n_tokens; ++y) {
      const double pr = rows[k * vocab.n_tokens + y];
      if (pr < 0.0) throw Error("TabularDenoiser: negative probability");
      total += pr;
      logits[k * vocab.n_tokens + y] = std::log(pr);
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("TabularDenoiser: row " + std::to_string(k) + " does not sum to 1");
  }
}

TabularDenoiser TabularDenoiser::constant(Vocabulary vocab, std::span<const double> probs, int steps, double horizon) {
  if (probs.size() != std::size_t(vocab.n_tokens)) throw Error("TabularDenoiser::constant: wrong row length");
  ad::Array rows({std::size_t(steps), probs.size()});
  for (int k = 0; k < steps; ++k) std::copy(probs.begin(), probs.end(), rows.values.begin() + k * probs.size());
  return TabularDenoiser(vocab, rows, horizon);
}

nlohmann::json TabularDenoiser::architecture() const { return {{"steps", steps_}, {"horizon", horizon_}}; }

std::size_t TabularDenoiser::row_index(double t) const {
  const double k = std::round(t / (horizon_ / steps_));
  return static_cast<std::size_t>(std::clamp(k, 0.0, double(steps_ - 1)));
}

std::vector<double> TabularDenoiser::row(std::size_t k) const {
  const auto probs = predict_x0(bind(nullptr), ad::constant(one_hot_batch({{vocab_.mask()}}, vocab_.states())),
                                std::vector<double>{k * horizon_ / steps_});
  return probs.value().values;
}

ad::Var TabularDenoiser::forward(const BoundParams& p, const ad::Var& relaxed, std::span<const double> times,
                                 std::span<const int> labels) const {
  if (!labels.empty()) throw Error("TabularDenoiser: conditioning is not supported");
  const std::size_t b = relaxed.dim(0);
  std::vector<std::size_t> rows(b);
  for (std::size_t r = 0; r < b; ++r) rows[r] = row_index(times[r]);
  const ad::Var picked = ad::index_select(p[0], rows);
  return ad::softmax(ad::reshape(picked, {b, 1, std::size_t(vocab_.n_tokens)}));
}

void save_checkpoint(const std::string& path, const Denoiser& model, const nlohmann::json& extra) {
  nlohmann::json header;
  header["format"] = "drakes-checkpoint";
  header["version"] = 1;
  header["kind"] = model.kind();
  header["vocabulary"] = {{"n_tokens", model.vocab().n_tokens}, {"mask_index", model.vocab().mask()}};
  header["sequence_length"] = model.sequence().length;
  header["architecture"] = model.architecture();
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : model.params()) plist.push_back({{"name", p.name}, {"shape", p.value.shape}});
  header["params"] = plist;
  header["extra"] = extra.is_null() ? nlohmann::json::object() : extra;
  header["config_hash"] = hex64(fnv1a64(header["architecture"].dump() + header["extra"].dump()));
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  const auto write_u64 = [&](std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  };
  write_u64(text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params())
    for (double v : p.value.values) write_u64(std::bit_cast<std::uint64_t>(v));
  if (!out) throw Error("save_checkpoint: write failed for " + path);
}

std::unique_ptr<Denoiser> load_checkpoint(const std::string& path, nlohmann::json* header_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + path);
  const auto read_u64 = [&]() {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw Error("load_checkpoint: truncated file " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[i]) << (8 * i);
    return v;
  };
  const std::uint64_t len = read_u64();
  if (len > (1u << 26)) throw Error("load_checkpoint: implausible header length in " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("load_checkpoint: truncated header in " + path);
  const auto header = nlohmann::json::parse(text);
  if (header.value("format", "") != "drakes-checkpoint") throw Error("load_checkpoint: not a checkpoint: " + path);

  const Vocabulary vocab(header.at("vocabulary").at("n_tokens").get<int>());
  const SequenceSpec seq(header.at("sequence_length").get<int>());
  const auto& arch = header.at("architecture");
  std::unique_ptr<Denoiser> model;
  const std::string kind = header.at("kind");
  if (kind == "mlp") {
    MlpDenoiserConfig cfg;
    cfg.width = arch.at("width");
    cfg.blocks = arch.at("blocks");
    cfg.n_labels = arch.at("n_labels");
    cfg.horizon = arch.at("horizon");
    model = std::make_unique<MlpDenoiser>(vocab, seq, cfg, 0);
  } else if (kind == "tabular") {
    model = std::make_unique<TabularDenoiser>(vocab, arch.at("steps").get<int>(), arch.at("horizon").get<double>());
  } else {
    throw Error("load_checkpoint: unknown model kind '" + kind + "'");
  }
  const auto& plist = header.at("params");
  if (plist.size() != model->params().size()) throw Error("load_checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < plist.size(); ++i) {
    auto& p = model->params()[i];
    if (plist[i].at("name") != p.name || plist[i].at("shape").get<ad::Shape>() != p.value.shape) {
      throw Error("load_checkpoint: parameter '" + p.name + "' does not match the architecture");
    }
    for (double& v : p.value.values) v = std::bit_cast<double>(read_u64());
  }
  if (header_out) *header_out = header;
  return model;
}

}  // namespace drakes
