#include "transformer.hpp"

#include <cmath>

#include <json.hpp>

namespace ef {

using nlohmann::json;

ModelConfig ModelConfig::desk(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  return c;
}

ModelConfig ModelConfig::full_size(std::size_t vocab) {
  ModelConfig c;
  c.n_emb = 512;
  c.n_layers = 6;
  c.n_heads = 8;
  c.ffn_width = 2048;
  c.vocab_size = vocab;
  return c;
}

void ModelConfig::validate() const {
  if (n_emb == 0 || n_heads == 0 || n_layers == 0 || ffn_width == 0)
    throw std::invalid_argument("model config: zero-sized dimension");
  if (n_emb % n_heads != 0)
    throw std::invalid_argument("model config: n_emb must divide by n_heads");
  if (vocab_size < 4)
    throw std::invalid_argument("model config: vocab must cover the 4 "
                                "special tokens");
  if (rel_pos_buckets < 2)
    throw std::invalid_argument("model config: need at least 2 buckets");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("model config: dropout must be in [0,1)");
}

std::string ModelConfig::to_json() const {
  json j;
  j["n_emb"] = n_emb;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ffn_width"] = ffn_width;
  j["vocab_size"] = vocab_size;
  j["max_len"] = max_len;
  j["rel_pos_buckets"] = rel_pos_buckets;
  j["rel_pos_max_distance"] = rel_pos_max_distance;
  j["max_positions"] = max_positions;
  j["use_exemplars"] = use_exemplars;
  j["exemplar_count"] = exemplar_count;
  j["norm_kind"] = norm_kind == NormKind::kScaleOnly ? "scale_only" : "standard";
  j["dropout"] = dropout;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.n_emb = j.at("n_emb").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.ffn_width = j.at("ffn_width").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.rel_pos_buckets = j.at("rel_pos_buckets").get<std::size_t>();
  c.rel_pos_max_distance = j.at("rel_pos_max_distance").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.use_exemplars = j.at("use_exemplars").get<bool>();
  c.exemplar_count = j.at("exemplar_count").get<std::size_t>();
  c.norm_kind = j.at("norm_kind").get<std::string>() == "standard"
                    ? NormKind::kStandard
                    : NormKind::kScaleOnly;
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

std::uint64_t ModelConfig::digest() const { return fnv1a(to_json()); }

int relative_position_bucket(std::size_t query_pos, std::size_t key_pos,
                             bool bidirectional, std::size_t n_buckets,
                             std::size_t max_distance) {
  const long long rel =
      static_cast<long long>(key_pos) - static_cast<long long>(query_pos);
  long long nb = static_cast<long long>(n_buckets);
  int bucket = 0;
  long long n;
  if (bidirectional) {
    nb /= 2;
    if (rel > 0) bucket += static_cast<int>(nb);
    n = rel < 0 ? -rel : rel;
  } else {
    n = rel < 0 ? -rel : 0;  // future keys collapse to bucket 0; masked anyway
  }
  const long long max_exact = nb / 2;
  if (n < max_exact) {
    bucket += static_cast<int>(n);
  } else {
    const double frac = std::log(static_cast<double>(n) /
                                 static_cast<double>(max_exact)) /
                        std::log(static_cast<double>(max_distance) /
                                 static_cast<double>(max_exact));
    long long large =
        max_exact + static_cast<long long>(frac * static_cast<double>(nb - max_exact));
    bucket += static_cast<int>(std::min(large, nb - 1));
  }
  return bucket;
}

TransformerStack::TransformerStack(ParameterStore& store,
                                   const std::string& prefix,
                                   const ModelConfig& cfg, Kind kind)
    : cfg_(cfg), kind_(kind), prefix_(prefix) {
  cfg_.validate();
  const std::size_t d = cfg_.n_emb;
  const bool std_norm = cfg_.norm_kind == NormKind::kStandard;
  auto add_norm = [&](const std::string& name, Parameter*& gamma,
                      Parameter*& beta) {
    gamma = &store.add(name + ".gamma", {d});
    beta = std_norm ? &store.add(name + ".beta", {d}) : nullptr;
  };
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string base = prefix_ + ".block" + std::to_string(i);
    Layer l{};
    l.wq = &store.add(base + ".attn.wq", {d, d});
    l.wk = &store.add(base + ".attn.wk", {d, d});
    l.wv = &store.add(base + ".attn.wv", {d, d});
    l.wo = &store.add(base + ".attn.wo", {d, d});
    add_norm(base + ".attn_norm", l.attn_gamma, l.attn_beta);
    if (kind_ == Kind::kDecoder) {
      l.cq = &store.add(base + ".cross.wq", {d, d});
      l.ck = &store.add(base + ".cross.wk", {d, d});
      l.cv = &store.add(base + ".cross.wv", {d, d});
      l.co = &store.add(base + ".cross.wo", {d, d});
      add_norm(base + ".cross_norm", l.cross_gamma, l.cross_beta);
    }
    l.w1 = &store.add(base + ".ffn.w1", {d, cfg_.ffn_width});
    l.w2 = &store.add(base + ".ffn.w2", {cfg_.ffn_width, d});
    add_norm(base + ".ffn_norm", l.ffn_gamma, l.ffn_beta);
    layers_.push_back(l);
  }
  rel_bias_ = &store.add(prefix_ + ".rel_bias",
                         {cfg_.rel_pos_buckets, cfg_.n_heads});
  add_norm(prefix_ + ".final_norm", final_gamma_, final_beta_);
}

void TransformerStack::init(Rng& rng) {
  for (auto& l : layers_) {
    for (Parameter* w : {l.wq, l.wk, l.wv, l.wo})
      init_uniform_fan_in(*w, cfg_.n_emb, rng);
    if (kind_ == Kind::kDecoder)
      for (Parameter* w : {l.cq, l.ck, l.cv, l.co})
        init_uniform_fan_in(*w, cfg_.n_emb, rng);
    init_uniform_fan_in(*l.w1, cfg_.n_emb, rng);
    init_uniform_fan_in(*l.w2, cfg_.ffn_width, rng);
    for (Parameter* g : {l.attn_gamma, l.ffn_gamma})
      std::fill(g->value.begin(), g->value.end(), 1.0);
    if (l.cross_gamma)
      std::fill(l.cross_gamma->value.begin(), l.cross_gamma->value.end(), 1.0);
  }
  std::fill(rel_bias_->value.begin(), rel_bias_->value.end(), 0.0);
  std::fill(final_gamma_->value.begin(), final_gamma_->value.end(), 1.0);
  // betas stay zero
}

Tensor TransformerStack::norm(Tape& t, Tensor x, Parameter* gamma,
                              Parameter* beta) const {
  Tensor g = t.param(*gamma);
  Tensor b = beta ? t.param(*beta) : Tensor();
  return t.layer_norm(x, g, b, cfg_.norm_kind);
}

Tensor TransformerStack::dropout(Tape& t, Tensor x, Rng* rng) const {
  if (rng == nullptr || cfg_.dropout == 0.0) return x;
  std::vector<std::uint8_t> keep(x.size());
  for (auto& k : keep) k = rng->uniform() >= cfg_.dropout ? 1 : 0;
  return t.scale(t.masked_fill(x, keep, 0.0), 1.0 / (1.0 - cfg_.dropout));
}

Tensor TransformerStack::attention(Tape& t, Tensor q_in, Tensor kv_in,
                                   Parameter* wq, Parameter* wk, Parameter* wv,
                                   Parameter* wo,
                                   const std::vector<Tensor>* bias,
                                   bool causal) const {
  const std::size_t heads = cfg_.n_heads;
  const std::size_t dh = cfg_.n_emb / heads;
  const std::size_t lq = q_in.shape()[0];
  const std::size_t lk = kv_in.shape()[0];
  Tensor q = t.matmul(q_in, t.param(*wq));
  Tensor k = t.matmul(kv_in, t.param(*wk));
  Tensor v = t.matmul(kv_in, t.param(*wv));

  std::vector<std::uint8_t> keep;
  if (causal) {
    keep.assign(lq * lk, 1);
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = i + 1; j < lk; ++j) keep[i * lk + j] = 0;
  }

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = t.slice_cols(q, h * dh, dh);
    Tensor kh = t.slice_cols(k, h * dh, dh);
    Tensor vh = t.slice_cols(v, h * dh, dh);
    Tensor scores =
        t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (bias != nullptr) scores = t.add(scores, (*bias)[h]);
    if (causal) scores = t.masked_fill(scores, keep, -1e30);
    head_out.push_back(t.matmul(t.softmax(scores, 1), vh));
  }
  return t.matmul(t.concat(head_out, 1), t.param(*wo));
}

Tensor TransformerStack::apply(Tape& t, Tensor x, std::optional<Tensor> memory,
                               Rng* dropout_rng) const {
  if (x.shape().size() != 2 || x.shape()[1] != cfg_.n_emb)
    throw std::invalid_argument(prefix_ + ": input must be (len, " +
                                std::to_string(cfg_.n_emb) + ")");
  if ((kind_ == Kind::kDecoder) != memory.has_value())
    throw std::invalid_argument(prefix_ + ": memory required iff decoder");
  const std::size_t len = x.shape()[0];
  if (len > cfg_.max_positions)
    throw std::invalid_argument(prefix_ + ": sequence length " +
                                std::to_string(len) + " exceeds maximum " +
                                std::to_string(cfg_.max_positions));

  // one bias matrix per head, shared by every layer of this stack
  std::vector<int> buckets(len * len);
  const bool bidir = kind_ == Kind::kEncoder;
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j)
      buckets[i * len + j] =
          relative_position_bucket(i, j, bidir, cfg_.rel_pos_buckets,
                                   cfg_.rel_pos_max_distance);
  Tensor gathered = t.embedding(t.param(*rel_bias_), buckets);
  std::vector<Tensor> bias;
  bias.reserve(cfg_.n_heads);
  for (std::size_t h = 0; h < cfg_.n_heads; ++h)
    bias.push_back(t.reshape(t.slice_cols(gathered, h, 1), {len, len}));

  for (const Layer& l : layers_) {
    Tensor xn = norm(t, x, l.attn_gamma, l.attn_beta);
    Tensor self = attention(t, xn, xn, l.wq, l.wk, l.wv, l.wo, &bias,
                            kind_ == Kind::kDecoder);
    x = t.add(x, dropout(t, self, dropout_rng));
    if (kind_ == Kind::kDecoder) {
      Tensor cross = attention(t, norm(t, x, l.cross_gamma, l.cross_beta),
                               *memory, l.cq, l.ck, l.cv, l.co, nullptr, false);
      x = t.add(x, dropout(t, cross, dropout_rng));
    }
    Tensor h = norm(t, x, l.ffn_gamma, l.ffn_beta);
    Tensor ffn = t.matmul(t.relu(t.matmul(h, t.param(*l.w1))), t.param(*l.w2));
    x = t.add(x, dropout(t, ffn, dropout_rng));
  }
  return norm(t, x, final_gamma_, final_beta_);
}

}  // namespace ef
