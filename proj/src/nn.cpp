#include "bdt/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>

static_assert(std::endian::native == std::endian::little,
              "parameter payloads assume a little-endian host");

namespace bdt::nn {

namespace {
Mat normal_init(Eigen::Index r, Eigen::Index c, RngStream& rng, double stddev) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = stddev * rng.normal();
  return m;
}
}  // namespace

Linear::Linear(Eigen::Index in, Eigen::Index out, RngStream& rng)
    : W(normal_init(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in))), true),
      b(Mat::Zero(1, out), true) {}

Linear Linear::zeros(Eigen::Index in, Eigen::Index out) {
  Linear l;
  l.W = ad::Tensor(Mat::Zero(in, out), true);
  l.b = ad::Tensor(Mat::Zero(1, out), true);
  return l;
}

ad::Tensor Linear::forward(const ad::Tensor& x) const {
  return ad::add_rowwise(x * W, b);
}

void Linear::collect(const std::string& prefix, ParamMap& out) {
  out.push_back({prefix + ".W", W});
  out.push_back({prefix + ".b", b});
}

LayerNorm::LayerNorm(Eigen::Index d)
    : gain(Mat::Ones(1, d), true), bias(Mat::Zero(1, d), true) {}

ad::Tensor LayerNorm::forward(const ad::Tensor& x) const {
  return ad::layer_norm(x, gain, bias);
}

void LayerNorm::collect(const std::string& prefix, ParamMap& out) {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Mlp::Mlp(const MlpConfig& c, RngStream& rng) : cfg(c) {
  if (cfg.input_dim < 1 || cfg.output_dim < 1 || cfg.hidden_layers < 1) {
    throw std::invalid_argument("Mlp: dimensions must be positive");
  }
  Eigen::Index in = cfg.input_dim;
  for (int i = 0; i < cfg.hidden_layers; ++i) {
    layers.emplace_back(in, cfg.hidden_dim, rng);
    in = cfg.hidden_dim;
  }
  layers.emplace_back(in, cfg.output_dim, rng);
}

ad::Tensor Mlp::forward(const ad::Tensor& x, RngStream& rng, bool training) const {
  ad::Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = ad::relu(layers[i].forward(h));
    h = ad::dropout(h, cfg.dropout, rng, training);
  }
  h = layers.back().forward(h);
  return cfg.tanh_output ? ad::tanh(h) : h;
}

void Mlp::collect(const std::string& prefix, ParamMap& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + ".fc" + std::to_string(i), out);
  }
}

void TransformerConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("TransformerConfig: n_layers < 1");
  if (n_heads < 1) throw std::invalid_argument("TransformerConfig: n_heads < 1");
  if (embed_dim < 1 || embed_dim % n_heads != 0) {
    throw std::invalid_argument("TransformerConfig: embed_dim must be a positive multiple of n_heads");
  }
  if (context_steps < 1) throw std::invalid_argument("TransformerConfig: context_steps < 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("TransformerConfig: dropout must be in [0,1)");
  }
}

Trunk::Trunk(const TransformerConfig& c, RngStream& rng) : cfg(c) {
  cfg.validate();
  const Eigen::Index d = cfg.embed_dim;
  blocks.resize(cfg.n_layers);
  for (auto& blk : blocks) {
    blk.ln1 = LayerNorm(d);
    blk.wq = Linear(d, d, rng);
    blk.wk = Linear(d, d, rng);
    blk.wv = Linear(d, d, rng);
    blk.wo = Linear(d, d, rng);
    blk.ln2 = LayerNorm(d);
    blk.fc1 = Linear(d, 4 * d, rng);
    blk.fc2 = Linear(4 * d, d, rng);
  }
  ln_f = LayerNorm(d);
}

TrunkState Trunk::new_state() const {
  TrunkState st;
  st.blocks.resize(blocks.size());
  return st;
}

ad::Tensor Trunk::forward_chunk(TrunkState& st, const ad::Tensor& x, RngStream& rng,
                                bool training) const {
  if (x.cols() != cfg.embed_dim) {
    throw std::invalid_argument("forward_chunk: chunk width does not match embed_dim");
  }
  const Eigen::Index c = x.rows();
  const Eigen::Index prior = st.tokens;
  const Eigen::Index total = prior + c;
  const int H = cfg.n_heads;
  const Eigen::Index dh = cfg.embed_dim / H;

  // Within-chunk causal mask; cached tokens are all in the past.
  Mat mask = Mat::Zero(c, total);
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = prior + i + 1; j < total; ++j) mask(i, j) = -1e30;
  }
  ad::Tensor mask_t = ad::constant(mask);

  ad::Tensor h = x;
  for (std::size_t li = 0; li < blocks.size(); ++li) {
    const Block& blk = blocks[li];
    BlockCache& cache = st.blocks[li];
    ad::Tensor a = blk.ln1.forward(h);
    ad::Tensor q = blk.wq.forward(a);
    cache.k_chunks.push_back(blk.wk.forward(a));
    cache.v_chunks.push_back(blk.wv.forward(a));
    ad::Tensor K = cache.k_chunks.size() == 1 ? cache.k_chunks[0]
                                              : ad::concat_rows(cache.k_chunks);
    ad::Tensor V = cache.v_chunks.size() == 1 ? cache.v_chunks[0]
                                              : ad::concat_rows(cache.v_chunks);
    std::vector<ad::Tensor> head_outs;
    head_outs.reserve(H);
    for (int hd = 0; hd < H; ++hd) {
      ad::Tensor qh = H == 1 ? q : ad::cols(q, hd * dh, dh);
      ad::Tensor kh = H == 1 ? K : ad::cols(K, hd * dh, dh);
      ad::Tensor vh = H == 1 ? V : ad::cols(V, hd * dh, dh);
      ad::Tensor scores = (qh * ad::transpose(kh)) * (1.0 / std::sqrt(static_cast<double>(dh)));
      ad::Tensor attn = ad::softmax(scores + mask_t, 1);
      attn = ad::dropout(attn, cfg.dropout, rng, training);
      head_outs.push_back(attn * vh);
    }
    ad::Tensor attn_out = H == 1 ? head_outs[0] : ad::concat_cols(head_outs);
    h = h + blk.wo.forward(attn_out);
    ad::Tensor m = blk.ln2.forward(h);
    ad::Tensor hidden = ad::relu(blk.fc1.forward(m));
    hidden = ad::dropout(hidden, cfg.dropout, rng, training);
    h = h + blk.fc2.forward(hidden);
  }
  st.tokens = total;
  return ln_f.forward(h);
}

void Trunk::collect(const std::string& prefix, ParamMap& out) {
  for (std::size_t li = 0; li < blocks.size(); ++li) {
    const std::string bp = prefix + ".block" + std::to_string(li);
    blocks[li].ln1.collect(bp + ".ln1", out);
    blocks[li].wq.collect(bp + ".attn.wq", out);
    blocks[li].wk.collect(bp + ".attn.wk", out);
    blocks[li].wv.collect(bp + ".attn.wv", out);
    blocks[li].wo.collect(bp + ".attn.wo", out);
    blocks[li].ln2.collect(bp + ".ln2", out);
    blocks[li].fc1.collect(bp + ".mlp.fc1", out);
    blocks[li].fc2.collect(bp + ".mlp.fc2", out);
  }
  ln_f.collect(prefix + ".ln_f", out);
}

AdamW::AdamW(const AdamWConfig& cfg, const ParamMap& params) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Mat::Zero(p.tensor.rows(), p.tensor.cols()));
    v_.push_back(Mat::Zero(p.tensor.rows(), p.tensor.cols()));
  }
}

void AdamW::step(ParamMap& params) {
  if (params.size() != m_.size()) {
    throw std::invalid_argument("AdamW::step: parameter list changed size");
  }
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  last_grad_norm_ = norm;
  if (!std::isfinite(norm)) {
    for (const auto& p : params) {
      if (p.tensor.has_grad() && !p.tensor.grad().allFinite()) {
        throw std::runtime_error("AdamW: non-finite gradient in parameter '" + p.name +
                                 "' at step " + std::to_string(t_ + 1));
      }
    }
    throw std::runtime_error("AdamW: non-finite gradient norm at step " +
                             std::to_string(t_ + 1));
  }
  const double scale =
      (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor& p = params[i].tensor;
    Mat g = p.has_grad() ? Mat(p.grad() * scale)
                         : Mat(Mat::Zero(p.rows(), p.cols()));
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Mat update = cfg_.lr * ((m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + cfg_.eps)).matrix();
    update += (cfg_.lr * cfg_.weight_decay) * p.value_mut();
    p.value_mut() -= update;
  }
}

void AdamW::zero_grad(ParamMap& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

namespace {
std::string encode_mat(const Mat& m) {
  std::vector<unsigned char> bytes(sizeof(double) * m.size());
  std::size_t off = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      std::memcpy(bytes.data() + off, &v, sizeof(double));
      off += sizeof(double);
    }
  }
  return base64_encode(bytes.data(), bytes.size());
}

Mat decode_mat(const std::string& data, Eigen::Index r, Eigen::Index c) {
  std::vector<unsigned char> bytes = base64_decode(data);
  if (bytes.size() != sizeof(double) * static_cast<std::size_t>(r * c)) {
    throw std::invalid_argument("parameter payload size does not match shape");
  }
  Mat m(r, c);
  std::size_t off = 0;
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      double v;
      std::memcpy(&v, bytes.data() + off, sizeof(double));
      off += sizeof(double);
      m(i, j) = v;
    }
  }
  return m;
}
}  // namespace

nlohmann::json params_to_json(const ParamMap& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& p : params) {
    j[p.name] = {{"shape", {p.tensor.rows(), p.tensor.cols()}},
                 {"data", encode_mat(p.tensor.value())}};
  }
  return j;
}

void params_from_json(ParamMap& params, const nlohmann::json& j) {
  if (j.size() != params.size()) {
    throw std::invalid_argument("checkpoint holds " + std::to_string(j.size()) +
                                " parameters, model expects " +
                                std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = j.find(p.name);
    if (it == j.end()) {
      throw std::invalid_argument("checkpoint is missing parameter '" + p.name + "'");
    }
    const auto shape = it->at("shape");
    const Eigen::Index r = shape.at(0).get<Eigen::Index>();
    const Eigen::Index c = shape.at(1).get<Eigen::Index>();
    if (r != p.tensor.rows() || c != p.tensor.cols()) {
      throw std::invalid_argument("checkpoint shape mismatch for parameter '" + p.name + "'");
    }
    p.tensor.value_mut() = decode_mat(it->at("data").get<std::string>(), r, c);
  }
}

nlohmann::json transformer_config_to_json(const TransformerConfig& cfg) {
  return {{"n_layers", cfg.n_layers},
          {"n_heads", cfg.n_heads},
          {"embed_dim", cfg.embed_dim},
          {"context_steps", cfg.context_steps},
          {"dropout", cfg.dropout}};
}

TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
  TransformerConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.context_steps = j.at("context_steps").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.validate();
  return cfg;
}

nlohmann::json mlp_config_to_json(const MlpConfig& cfg) {
  return {{"input_dim", cfg.input_dim},
          {"output_dim", cfg.output_dim},
          {"hidden_dim", cfg.hidden_dim},
          {"hidden_layers", cfg.hidden_layers},
          {"dropout", cfg.dropout},
          {"tanh_output", cfg.tanh_output}};
}

MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  MlpConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.output_dim = j.at("output_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.hidden_layers = j.at("hidden_layers").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.tanh_output = j.at("tanh_output").get<bool>();
  return cfg;
}

}  // namespace bdt::nn
