#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sciedkit/config.hpp"
#include "sciedkit/ops.hpp"
#include "sciedkit/rng.hpp"
#include "sciedkit/tokenizer.hpp"

namespace sciedkit {

struct ModelConfig {
  int vocab_size = 2048;
  int max_len = 64;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int n_layers = 2;
  int n_classes = 2;
  double dropout = 0.1;
  double ln_eps = 1e-12;
  std::string nonlinearity = "gelu_tanh";
  std::string residual_norm = "post";
  bool tie_mlm = true;
  bool use_pos_emb = true;  // test-only switch, always on in real runs

  int d_k() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size < 1 || max_len < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 ||
        n_layers < 1 || n_classes < 1) {
      throw InputError("model config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw InputError("model config: d_model " + std::to_string(d_model) +
                       " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw InputError("model config: dropout must be in [0, 1)");
    }
    if (ln_eps <= 0.0) throw InputError("model config: ln_eps must be > 0");
    if (nonlinearity != "gelu_tanh") {
      throw InputError("model config: unsupported nonlinearity `" + nonlinearity + "`");
    }
    if (residual_norm != "post") {
      throw InputError("model config: unsupported residual_norm `" + residual_norm + "`");
    }
  }

  size_t expected_param_count() const {
    const size_t v = vocab_size, m = max_len, d = d_model, f = d_ff, c = n_classes;
    size_t per_layer = 4 * d * d + 4 * d  // attention projections + biases
                       + 2 * d            // ln1
                       + d * f + f        // ffn in
                       + f * d + d        // ffn out
                       + 2 * d;           // ln2
    size_t total = v * d + m * d + 2 * d;  // embeddings + embedding ln
    total += static_cast<size_t>(n_layers) * per_layer;
    total += d * d + d + 2 * d + v;  // mlm transform + ln + output bias
    if (!tie_mlm) total += d * v;
    total += d * c + c;  // classifier
    return total;
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << "vocab_size = " << vocab_size << "\n"
       << "max_len = " << max_len << "\n"
       << "d_model = " << d_model << "\n"
       << "n_heads = " << n_heads << "\n"
       << "d_ff = " << d_ff << "\n"
       << "n_layers = " << n_layers << "\n"
       << "n_classes = " << n_classes << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", dropout);
    os << "dropout = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", ln_eps);
    os << "ln_eps = " << buf << "\n"
       << "nonlinearity = " << nonlinearity << "\n"
       << "residual_norm = " << residual_norm << "\n"
       << "tie_mlm = " << (tie_mlm ? "true" : "false") << "\n";
    return os.str();
  }

  static ModelConfig from_kv(const KeyValueConfig& kv, const std::string& prefix = "") {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(kv.get_int(prefix + "vocab_size", cfg.vocab_size));
    cfg.max_len = static_cast<int>(kv.get_int(prefix + "max_len", cfg.max_len));
    cfg.d_model = static_cast<int>(kv.get_int(prefix + "d_model", cfg.d_model));
    cfg.n_heads = static_cast<int>(kv.get_int(prefix + "n_heads", cfg.n_heads));
    cfg.d_ff = static_cast<int>(kv.get_int(prefix + "d_ff", cfg.d_ff));
    cfg.n_layers = static_cast<int>(kv.get_int(prefix + "n_layers", cfg.n_layers));
    cfg.n_classes = static_cast<int>(kv.get_int(prefix + "n_classes", cfg.n_classes));
    cfg.dropout = kv.get_double(prefix + "dropout", cfg.dropout);
    cfg.ln_eps = kv.get_double(prefix + "ln_eps", cfg.ln_eps);
    cfg.nonlinearity = kv.get_string(prefix + "nonlinearity", cfg.nonlinearity);
    cfg.residual_norm = kv.get_string(prefix + "residual_norm", cfg.residual_norm);
    cfg.tie_mlm = kv.get_bool(prefix + "tie_mlm", cfg.tie_mlm);
    cfg.validate();
    return cfg;
  }
};

// Flattened, possibly PAD-trimmed batch of encoded sequences.
struct TokenBatch {
  size_t batch = 0;
  size_t len = 0;
  std::vector<int> ids;   // batch * len, row-major
  std::vector<int> mask;  // 1 = real token, 0 = PAD
};

inline TokenBatch make_batch(const std::vector<EncodedSequence>& seqs, bool trim_pad = true) {
  if (seqs.empty()) throw InputError("make_batch: empty sequence list");
  TokenBatch out;
  out.batch = seqs.size();
  size_t len = seqs[0].ids.size();
  if (trim_pad) {
    size_t longest = 0;
    for (const auto& s : seqs) {
      longest = std::max(longest, static_cast<size_t>(s.original_length));
    }
    len = std::max<size_t>(1, longest);
  }
  out.len = len;
  out.ids.reserve(out.batch * len);
  out.mask.reserve(out.batch * len);
  for (const auto& s : seqs) {
    if (s.ids.size() < len) {
      throw InputError("make_batch: sequence shorter than batch length");
    }
    for (size_t i = 0; i < len; ++i) {
      out.ids.push_back(s.ids[i]);
      out.mask.push_back(s.attention_mask[i]);
    }
  }
  return out;
}

enum class RunMode { train, eval };

// Weights of the encoder plus MLM and classification heads, held as named
// tensors in a fixed canonical order (the checkpoint serialization order).
template <typename T>
class EncoderModel {
 public:
  ModelConfig cfg;

  static EncoderModel init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    EncoderModel m;
    m.cfg = config;
    const size_t v = config.vocab_size, ml = config.max_len, d = config.d_model,
                 f = config.d_ff, c = config.n_classes;
    m.add_param("tok_emb", {v, d});
    m.add_param("pos_emb", {ml, d});
    m.add_param("emb_ln_g", {d});
    m.add_param("emb_ln_b", {d});
    for (int i = 0; i < config.n_layers; ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      m.add_param(p + "attn_wq", {d, d});
      m.add_param(p + "attn_bq", {d});
      m.add_param(p + "attn_wk", {d, d});
      m.add_param(p + "attn_bk", {d});
      m.add_param(p + "attn_wv", {d, d});
      m.add_param(p + "attn_bv", {d});
      m.add_param(p + "attn_wo", {d, d});
      m.add_param(p + "attn_bo", {d});
      m.add_param(p + "ln1_g", {d});
      m.add_param(p + "ln1_b", {d});
      m.add_param(p + "ffn_w1", {d, f});
      m.add_param(p + "ffn_b1", {f});
      m.add_param(p + "ffn_w2", {f, d});
      m.add_param(p + "ffn_b2", {d});
      m.add_param(p + "ln2_g", {d});
      m.add_param(p + "ln2_b", {d});
    }
    m.add_param("mlm.dense_w", {d, d});
    m.add_param("mlm.dense_b", {d});
    m.add_param("mlm.ln_g", {d});
    m.add_param("mlm.ln_b", {d});
    if (!config.tie_mlm) m.add_param("mlm.out_w", {d, v});
    m.add_param("mlm.out_b", {v});
    m.add_param("cls.w", {d, c});
    m.add_param("cls.b", {c});

    Rng rng(Rng::mix(seed, 0xe0c0de));
    for (size_t i = 0; i < m.names_.size(); ++i) {
      auto& t = m.tensors_[i];
      const std::string& name = m.names_[i];
      const bool ln_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, "_g") == 0;
      if (t.ndim() == 2) {
        for (auto& x : t.values()) x = T(rng.normal() * 0.02);
      } else if (ln_gain) {
        for (auto& x : t.values()) x = T(1);
      }  // biases stay zero
    }
    return m;
  }

  const std::vector<std::string>& param_names() const { return names_; }

  Tensor<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter: " + name);
    return tensors_[it->second];
  }
  const Tensor<T>& param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter: " + name);
    return tensors_[it->second];
  }
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  size_t param_count() const {
    size_t total = 0;
    for (const auto& t : tensors_) total += t.size();
    return total;
  }

  void zero_grads() {
    for (auto& t : tensors_) t.zero_grad();
  }

  bool all_params_finite() const {
    for (const auto& t : tensors_) {
      for (T v : t.values()) {
        if (!std::isfinite(static_cast<double>(v))) return false;
      }
    }
    return true;
  }

  EncoderModel deep_copy() const {
    EncoderModel m;
    m.cfg = cfg;
    m.names_ = names_;
    m.index_ = index_;
    for (const auto& t : tensors_) {
      auto copy = t.detached_copy();
      copy.set_requires_grad(true);
      m.tensors_.push_back(copy);
    }
    return m;
  }

  struct AttnCapture {
    int layer = 0;                 // which layer to record
    std::vector<double> probs;     // [B*H, L, L] softmax output
    size_t groups = 0, len = 0;
  };

  // Hidden states [B, L, d_model]. Train mode needs the dropout generator;
  // eval mode is deterministic and records nothing unless given a tape.
  Tensor<T> forward(const TokenBatch& batch, RunMode mode, Tape<T>* tape = nullptr,
                    Rng* dropout_rng = nullptr, AttnCapture* capture = nullptr) const {
    cfg.validate();
    const size_t B = batch.batch, L = batch.len;
    if (B == 0 || L == 0) throw InputError("encoder_forward: empty batch");
    if (L > static_cast<size_t>(cfg.max_len)) {
      throw InputError("encoder_forward: sequence length " + std::to_string(L) +
                       " exceeds max_len " + std::to_string(cfg.max_len));
    }
    for (int id : batch.ids) {
      if (id < 0 || id >= cfg.vocab_size) {
        throw InputError("encoder_forward: token id " + std::to_string(id) +
                         " out of range [0, " + std::to_string(cfg.vocab_size) + ")");
      }
    }
    const bool train = mode == RunMode::train;
    if (train && cfg.dropout > 0.0 && dropout_rng == nullptr) {
      throw InputError("encoder_forward: train mode requires a dropout generator");
    }
    auto drop = [&](Tensor<T> x) {
      if (train && cfg.dropout > 0.0) return dropout(x, cfg.dropout, *dropout_rng, tape);
      return x;
    };

    Tensor<T> h = embedding(param("tok_emb"), batch.ids, tape);
    if (cfg.use_pos_emb) {
      std::vector<int> pos(B * L);
      for (size_t b = 0; b < B; ++b) {
        for (size_t l = 0; l < L; ++l) pos[b * L + l] = static_cast<int>(l);
      }
      h = add(h, embedding(param("pos_emb"), pos, tape), tape);
    }
    h = layer_norm(h, param("emb_ln_g"), param("emb_ln_b"), T(cfg.ln_eps), tape);
    h = drop(h);

    std::vector<T> column_bias(B * L);
    for (size_t i = 0; i < column_bias.size(); ++i) {
      column_bias[i] = batch.mask[i] ? T(0) : T(kMaskBias);
    }
    const size_t heads = cfg.n_heads;
    const T inv_sqrt_dk = T(1.0 / std::sqrt(static_cast<double>(cfg.d_k())));

    for (int layer = 0; layer < cfg.n_layers; ++layer) {
      const std::string p = "layer" + std::to_string(layer) + ".";
      auto q = split_heads(
          add_bias(matmul(h, param(p + "attn_wq"), tape), param(p + "attn_bq"), tape), B, L,
          heads, tape);
      auto k = split_heads(
          add_bias(matmul(h, param(p + "attn_wk"), tape), param(p + "attn_bk"), tape), B, L,
          heads, tape);
      auto v = split_heads(
          add_bias(matmul(h, param(p + "attn_wv"), tape), param(p + "attn_bv"), tape), B, L,
          heads, tape);
      auto scores = scale(bmm(q, k, tape, /*trans_b=*/true), inv_sqrt_dk, tape);
      scores = add_attention_mask(scores, column_bias, B, heads, tape);
      auto probs = softmax(scores, 2, tape);
      if (capture && capture->layer == layer) {
        capture->probs.assign(probs.values().begin(), probs.values().end());
        capture->groups = B * heads;
        capture->len = L;
      }
      auto ctx = merge_heads(bmm(drop(probs), v, tape), B, heads, L, tape);
      auto attn_out =
          drop(add_bias(matmul(ctx, param(p + "attn_wo"), tape), param(p + "attn_bo"), tape));
      h = layer_norm(add(h, attn_out, tape), param(p + "ln1_g"), param(p + "ln1_b"),
                     T(cfg.ln_eps), tape);
      auto inner = gelu(
          add_bias(matmul(h, param(p + "ffn_w1"), tape), param(p + "ffn_b1"), tape), tape);
      auto ffn_out =
          drop(add_bias(matmul(inner, param(p + "ffn_w2"), tape), param(p + "ffn_b2"), tape));
      h = layer_norm(add(h, ffn_out, tape), param(p + "ln2_g"), param(p + "ln2_b"),
                     T(cfg.ln_eps), tape);
    }
    return reshape(h, {B, L, static_cast<size_t>(cfg.d_model)}, tape);
  }

  // MLM logits for a row subset [N, d_model] -> [N, vocab]; the training
  // loop calls this on masked positions only.
  Tensor<T> mlm_logits_rows(const Tensor<T>& rows, Tape<T>* tape = nullptr) const {
    auto t = add_bias(matmul(rows, param("mlm.dense_w"), tape), param("mlm.dense_b"), tape);
    t = layer_norm(gelu(t, tape), param("mlm.ln_g"), param("mlm.ln_b"), T(cfg.ln_eps), tape);
    Tensor<T> logits = cfg.tie_mlm
                           ? matmul(t, param("tok_emb"), tape, false, /*trans_b=*/true)
                           : matmul(t, param("mlm.out_w"), tape);
    return add_bias(logits, param("mlm.out_b"), tape);
  }

  // [B, L, d_model] -> [B, L, vocab]
  Tensor<T> mlm_logits(const Tensor<T>& hidden, Tape<T>* tape = nullptr) const {
    if (hidden.ndim() != 3) {
      throw InputError("mlm_logits expects [B, L, d_model], got " + shape_str(hidden.shape()));
    }
    const size_t B = hidden.dim(0), L = hidden.dim(1), D = hidden.dim(2);
    auto flat = reshape(hidden, {B * L, D}, tape);
    auto logits = mlm_logits_rows(flat, tape);
    return reshape(logits, {B, L, static_cast<size_t>(cfg.vocab_size)}, tape);
  }

  // Classifier logits read the CLS position only: [B, L, d_model] -> [B, n_classes].
  Tensor<T> cls_logits(const Tensor<T>& hidden, Tape<T>* tape = nullptr) const {
    if (hidden.ndim() != 3) {
      throw InputError("cls_logits expects [B, L, d_model], got " + shape_str(hidden.shape()));
    }
    const size_t B = hidden.dim(0), L = hidden.dim(1), D = hidden.dim(2);
    auto flat = reshape(hidden, {B * L, D}, tape);
    std::vector<int> cls_ix(B);
    for (size_t b = 0; b < B; ++b) cls_ix[b] = static_cast<int>(b * L);
    auto rows = gather_rows(flat, cls_ix, tape);
    return add_bias(matmul(rows, param("cls.w"), tape), param("cls.b"), tape);
  }

 private:
  void add_param(const std::string& name, std::vector<size_t> shape) {
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true));
  }

  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

struct AttentionMap {
  size_t len = 0;
  std::vector<double> weights;      // len x len, rows sum to 1
  std::vector<std::string> tokens;  // display form per position
};

// Attention weights of one head for one encoded sequence, with token labels.
template <typename T>
AttentionMap attention_map(const EncoderModel<T>& model, const Vocabulary& vocab,
                           const EncodedSequence& seq, int layer, int head) {
  if (layer < 0 || layer >= model.cfg.n_layers) {
    throw InputError("attention_map: layer " + std::to_string(layer) + " out of range [0, " +
                     std::to_string(model.cfg.n_layers) + ")");
  }
  if (head < 0 || head >= model.cfg.n_heads) {
    throw InputError("attention_map: head " + std::to_string(head) + " out of range [0, " +
                     std::to_string(model.cfg.n_heads) + ")");
  }
  TokenBatch batch = make_batch({seq}, /*trim_pad=*/true);
  typename EncoderModel<T>::AttnCapture capture;
  capture.layer = layer;
  model.forward(batch, RunMode::eval, nullptr, nullptr, &capture);

  AttentionMap map;
  map.len = capture.len;
  map.weights.resize(map.len * map.len);
  const size_t offset = static_cast<size_t>(head) * map.len * map.len;
  for (size_t i = 0; i < map.len * map.len; ++i) {
    map.weights[i] = capture.probs[offset + i];
  }
  for (size_t i = 0; i < map.len; ++i) {
    map.tokens.push_back(vocab.piece_display(batch.ids[i]));
  }
  return map;
}

}  // namespace sciedkit
