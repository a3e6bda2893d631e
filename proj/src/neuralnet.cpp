#include "breathid/neuralnet.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

using json = nlohmann::json;

namespace breathid::nn {

void NetworkSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("network: input_dim must be >= 1");
  if (classes < 2) throw std::invalid_argument("network: need at least 2 classes");
  for (const auto& c : convs) {
    if (c.filters < 1 || c.kernel < 1 || c.stride < 1)
      throw std::invalid_argument("network: conv filters/kernel/stride must be >= 1");
    if (c.stride >= c.kernel)
      throw std::invalid_argument("network: conv stride must be smaller than the kernel");
    if (c.dropout < 0.0 || c.dropout >= 1.0)
      throw std::invalid_argument("network: dropout must lie in [0, 1)");
  }
  if (gru.units < 1) throw std::invalid_argument("network: GRU units must be >= 1");
  if (gru.dropout < 0.0 || gru.dropout >= 1.0)
    throw std::invalid_argument("network: dropout must lie in [0, 1)");
}

std::string NetworkSpec::to_text() const {
  std::ostringstream os;
  for (const auto& c : convs)
    os << "C1D(" << c.filters << "," << c.kernel << "," << c.stride << "," << c.dropout << ") ";
  os << "GRU(" << gru.units << "," << gru.dropout << ") Dense(" << classes << ")";
  return os.str();
}

namespace {

std::vector<double> parse_args(const std::string& body, const std::string& token) {
  std::vector<double> args;
  std::string cur;
  for (char ch : body) {
    if (ch == ',') {
      args.push_back(std::stod(cur));
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) args.push_back(std::stod(cur));
  if (args.empty()) throw std::invalid_argument("layer needs arguments: " + token);
  return args;
}

}  // namespace

NetworkSpec NetworkSpec::from_text(const std::string& text, int input_dim) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  bool seen_gru = false, seen_dense = false;

  std::istringstream is(text);
  std::string token;
  while (is >> token) {
    const auto open = token.find('(');
    std::string name = token.substr(0, open);
    std::vector<double> args;
    if (open != std::string::npos) {
      const auto close = token.rfind(')');
      if (close == std::string::npos || close < open)
        throw std::invalid_argument("unbalanced parentheses in layer: " + token);
      const std::string body = token.substr(open + 1, close - open - 1);
      if (!body.empty()) args = parse_args(body, token);
    }
    if (seen_dense) throw std::invalid_argument("layers after Dense: " + token);
    if (name == "C1D") {
      if (seen_gru) throw std::invalid_argument("C1D after GRU");
      if (args.size() != 3 && args.size() != 4)
        throw std::invalid_argument("C1D expects (filters,kernel,stride[,dropout])");
      Conv1dSpec c;
      c.filters = static_cast<int>(args[0]);
      c.kernel = static_cast<int>(args[1]);
      c.stride = static_cast<int>(args[2]);
      c.dropout = args.size() == 4 ? args[3] : 0.0;
      spec.convs.push_back(c);
    } else if (name == "GRU") {
      if (seen_gru) throw std::invalid_argument("multiple GRU layers");
      if (args.size() != 1 && args.size() != 2)
        throw std::invalid_argument("GRU expects (units[,dropout])");
      spec.gru.units = static_cast<int>(args[0]);
      spec.gru.dropout = args.size() == 2 ? args[1] : 0.0;
      seen_gru = true;
    } else if (name == "Dense") {
      if (!seen_gru) throw std::invalid_argument("Dense before GRU");
      if (args.size() > 1) throw std::invalid_argument("Dense expects at most one argument");
      spec.classes = args.empty() ? 0 : static_cast<int>(args[0]);
      seen_dense = true;
    } else {
      throw std::invalid_argument("unknown layer: " + token);
    }
  }
  if (!seen_gru || !seen_dense)
    throw std::invalid_argument("network text must contain GRU and Dense layers");
  return spec;
}

int NetworkSpec::min_input_length() const {
  int needed = 1;
  for (auto it = convs.rbegin(); it != convs.rend(); ++it)
    needed = (needed - 1) * it->stride + it->kernel;
  return needed;
}

int NetworkSpec::conv_output_length(int n) const {
  for (const auto& c : convs) {
    n = conv_out_len(n, c.kernel, c.stride);
    if (n < 1) return -1;
  }
  return n;
}

template <typename S>
std::vector<std::pair<S*, std::ptrdiff_t>> tensor_views(ParamSet<S>& p) {
  std::vector<std::pair<S*, std::ptrdiff_t>> v;
  for (auto& c : p.convs) {
    v.emplace_back(c.w.data(), c.w.size());
    v.emplace_back(c.b.data(), c.b.size());
  }
  for (auto* m : {&p.gru.wz, &p.gru.wr, &p.gru.wh, &p.gru.uz, &p.gru.ur, &p.gru.uh})
    v.emplace_back(m->data(), m->size());
  for (auto* b : {&p.gru.bz, &p.gru.br, &p.gru.bh}) v.emplace_back(b->data(), b->size());
  v.emplace_back(p.dense.w.data(), p.dense.w.size());
  v.emplace_back(p.dense.b.data(), p.dense.b.size());
  return v;
}

template <typename S>
std::vector<std::pair<const S*, std::ptrdiff_t>> tensor_views(const ParamSet<S>& p) {
  auto mut = tensor_views(const_cast<ParamSet<S>&>(p));
  std::vector<std::pair<const S*, std::ptrdiff_t>> v;
  v.reserve(mut.size());
  for (auto [ptr, len] : mut) v.emplace_back(ptr, len);
  return v;
}

template <typename S>
std::ptrdiff_t param_count(const ParamSet<S>& p) {
  std::ptrdiff_t n = 0;
  for (auto [ptr, len] : tensor_views(p)) n += len;
  return n;
}

template <typename S>
ParamSet<S> zero_params(const NetworkSpec& spec) {
  spec.validate();
  ParamSet<S> p;
  int in_ch = spec.input_dim;
  for (const auto& c : spec.convs) {
    ConvParams<S> cp;
    cp.w = MatX<S>::Zero(c.filters, in_ch * c.kernel);
    cp.b = VecX<S>::Zero(c.filters);
    p.convs.push_back(std::move(cp));
    in_ch = c.filters;
  }
  const int u = spec.gru.units;
  p.gru.wz = MatX<S>::Zero(u, in_ch);
  p.gru.wr = MatX<S>::Zero(u, in_ch);
  p.gru.wh = MatX<S>::Zero(u, in_ch);
  p.gru.uz = MatX<S>::Zero(u, u);
  p.gru.ur = MatX<S>::Zero(u, u);
  p.gru.uh = MatX<S>::Zero(u, u);
  p.gru.bz = VecX<S>::Zero(u);
  p.gru.br = VecX<S>::Zero(u);
  p.gru.bh = VecX<S>::Zero(u);
  p.dense.w = MatX<S>::Zero(spec.classes, u);
  p.dense.b = VecX<S>::Zero(spec.classes);
  return p;
}

template <typename S>
ParamSet<S> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  ParamSet<S> p = zero_params<S>(spec);
  Rng rng(seed);
  auto fill = [&rng](MatX<S>& m, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    S* d = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i)
      d[i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
  };
  int in_ch = spec.input_dim;
  for (std::size_t i = 0; i < spec.convs.size(); ++i) {
    fill(p.convs[i].w, in_ch * spec.convs[i].kernel);
    in_ch = spec.convs[i].filters;
  }
  fill(p.gru.wz, in_ch);
  fill(p.gru.wr, in_ch);
  fill(p.gru.wh, in_ch);
  const int u = spec.gru.units;
  fill(p.gru.uz, u);
  fill(p.gru.ur, u);
  fill(p.gru.uh, u);
  fill(p.dense.w, u);
  return p;
}

namespace {

template <typename S>
MatX<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  MatX<S> m(rows, cols);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  S* d = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i)
    d[i] = rng.uniform() < rate ? S(0) : keep_scale;
  return m;
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
struct ForwardCache {
  std::vector<MatX<S>> conv_in;      // post-dropout layer inputs
  std::vector<MatX<S>> conv_patch;   // im2col of conv_in
  std::vector<MatX<S>> conv_pre;     // pre-activation outputs
  std::vector<MatX<S>> conv_mask;    // dropout multipliers (0x0 when unused)
  MatX<S> gru_in;                    // post-dropout GRU input
  MatX<S> gru_mask;
  MatX<S> h_prev, z, r, htilde, rh;  // units x T step caches
  VecX<S> h_final, logits, probs;
};

template <typename S>
MatX<S> to_eigen(const MatF& m) {
  MatX<S> e(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) e(r, c) = static_cast<S>(m.data[std::size_t(r) * m.cols + c]);
  return e;
}

template <typename S>
MatX<S> im2col(const MatX<S>& in, int kernel, int stride, int t_out) {
  const Eigen::Index cin = in.rows();
  MatX<S> p(cin * kernel, t_out);
  for (int j = 0; j < t_out; ++j)
    for (Eigen::Index c = 0; c < cin; ++c)
      for (int q = 0; q < kernel; ++q) p(c * kernel + q, j) = in(c, j * stride + q);
  return p;
}

template <typename S>
void run_forward(const NetworkSpec& spec, const ParamSet<S>& params, const MatF& x, Rng* rng,
                 ForwardCache<S>& cache) {
  if (x.rows != spec.input_dim)
    throw std::invalid_argument("input feature dimension mismatch: got " + std::to_string(x.rows) +
                                ", expected " + std::to_string(spec.input_dim));
  if (x.cols < spec.min_input_length())
    throw std::invalid_argument("input of length " + std::to_string(x.cols) +
                                " is shorter than the network minimum " +
                                std::to_string(spec.min_input_length()));

  const std::size_t nconv = spec.convs.size();
  cache.conv_in.resize(nconv);
  cache.conv_patch.resize(nconv);
  cache.conv_pre.resize(nconv);
  cache.conv_mask.assign(nconv, MatX<S>());

  MatX<S> cur = to_eigen<S>(x);
  for (std::size_t i = 0; i < nconv; ++i) {
    const auto& c = spec.convs[i];
    if (c.dropout > 0.0 && rng) {
      cache.conv_mask[i] = dropout_mask<S>(cur.rows(), cur.cols(), c.dropout, *rng);
      cur = cur.cwiseProduct(cache.conv_mask[i]);
    }
    const int t_out = conv_out_len(static_cast<int>(cur.cols()), c.kernel, c.stride);
    cache.conv_in[i] = cur;
    cache.conv_patch[i] = im2col(cache.conv_in[i], c.kernel, c.stride, t_out);
    cache.conv_pre[i] = params.convs[i].w * cache.conv_patch[i];
    cache.conv_pre[i].colwise() += params.convs[i].b;
    cur = cache.conv_pre[i].cwiseMax(S(0));
  }

  if (spec.gru.dropout > 0.0 && rng) {
    cache.gru_mask = dropout_mask<S>(cur.rows(), cur.cols(), spec.gru.dropout, *rng);
    cur = cur.cwiseProduct(cache.gru_mask);
  } else {
    cache.gru_mask.resize(0, 0);
  }
  cache.gru_in = std::move(cur);

  const auto& g = params.gru;
  const Eigen::Index t_len = cache.gru_in.cols();
  const int u = spec.gru.units;
  const MatX<S> az = g.wz * cache.gru_in;
  const MatX<S> ar = g.wr * cache.gru_in;
  const MatX<S> ah = g.wh * cache.gru_in;

  cache.h_prev.resize(u, t_len);
  cache.z.resize(u, t_len);
  cache.r.resize(u, t_len);
  cache.htilde.resize(u, t_len);
  cache.rh.resize(u, t_len);

  VecX<S> h = VecX<S>::Zero(u);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    cache.h_prev.col(t) = h;
    const VecX<S> zt =
        (az.col(t) + g.uz * h + g.bz).unaryExpr([](S v) { return stable_sigmoid(v); });
    const VecX<S> rt =
        (ar.col(t) + g.ur * h + g.br).unaryExpr([](S v) { return stable_sigmoid(v); });
    const VecX<S> rh_t = rt.cwiseProduct(h);
    const VecX<S> ht =
        (ah.col(t) + g.uh * rh_t + g.bh).unaryExpr([](S v) { return std::tanh(v); });
    h = (VecX<S>::Ones(u) - zt).cwiseProduct(h) + zt.cwiseProduct(ht);
    cache.z.col(t) = zt;
    cache.r.col(t) = rt;
    cache.htilde.col(t) = ht;
    cache.rh.col(t) = rh_t;
  }
  cache.h_final = h;

  cache.logits = params.dense.w * h + params.dense.b;
  const S peak = cache.logits.maxCoeff();
  VecX<S> ex = (cache.logits.array() - peak).exp().matrix();
  cache.probs = ex / ex.sum();
}

template <typename S>
S loss_from_cache(const ForwardCache<S>& cache, int label) {
  const S peak = cache.logits.maxCoeff();
  const S lse = peak + std::log((cache.logits.array() - peak).exp().sum());
  return lse - cache.logits(label);
}

template <typename S>
void run_backward(const NetworkSpec& spec, const ParamSet<S>& params, const ForwardCache<S>& cache,
                  int label, ParamSet<S>& grads) {
  VecX<S> dlogits = cache.probs;
  dlogits(label) -= S(1);
  grads.dense.w += dlogits * cache.h_final.transpose();
  grads.dense.b += dlogits;

  const auto& g = params.gru;
  const Eigen::Index t_len = cache.gru_in.cols();
  const int u = spec.gru.units;
  MatX<S> dzpre(u, t_len), drpre(u, t_len), dhpre(u, t_len);
  VecX<S> dh = params.dense.w.transpose() * dlogits;
  for (Eigen::Index t = t_len - 1; t >= 0; --t) {
    const auto zt = cache.z.col(t);
    const auto rt = cache.r.col(t);
    const auto ht = cache.htilde.col(t);
    const auto hp = cache.h_prev.col(t);
    const VecX<S> dz = dh.cwiseProduct(ht - hp);
    const VecX<S> dz_pre = dz.cwiseProduct(zt).cwiseProduct(VecX<S>::Ones(u) - zt);
    const VecX<S> dht = dh.cwiseProduct(zt);
    const VecX<S> dht_pre =
        dht.cwiseProduct(VecX<S>::Ones(u) - ht.cwiseProduct(ht));
    VecX<S> dhp = dh.cwiseProduct(VecX<S>::Ones(u) - zt);
    const VecX<S> drh = g.uh.transpose() * dht_pre;
    const VecX<S> dr_pre =
        drh.cwiseProduct(hp).cwiseProduct(rt).cwiseProduct(VecX<S>::Ones(u) - rt);
    dhp += drh.cwiseProduct(rt);
    dhp += g.uz.transpose() * dz_pre + g.ur.transpose() * dr_pre;
    dzpre.col(t) = dz_pre;
    drpre.col(t) = dr_pre;
    dhpre.col(t) = dht_pre;
    dh = dhp;
  }
  grads.gru.wz += dzpre * cache.gru_in.transpose();
  grads.gru.wr += drpre * cache.gru_in.transpose();
  grads.gru.wh += dhpre * cache.gru_in.transpose();
  grads.gru.uz += dzpre * cache.h_prev.transpose();
  grads.gru.ur += drpre * cache.h_prev.transpose();
  grads.gru.uh += dhpre * cache.rh.transpose();
  grads.gru.bz += dzpre.rowwise().sum();
  grads.gru.br += drpre.rowwise().sum();
  grads.gru.bh += dhpre.rowwise().sum();

  MatX<S> dout =
      g.wz.transpose() * dzpre + g.wr.transpose() * drpre + g.wh.transpose() * dhpre;
  if (cache.gru_mask.size() > 0) dout = dout.cwiseProduct(cache.gru_mask);

  for (int i = static_cast<int>(spec.convs.size()) - 1; i >= 0; --i) {
    const auto& c = spec.convs[i];
    const MatX<S> dpre =
        dout.cwiseProduct((cache.conv_pre[i].array() > S(0)).template cast<S>().matrix());
    grads.convs[i].w += dpre * cache.conv_patch[i].transpose();
    grads.convs[i].b += dpre.rowwise().sum();
    if (i == 0) break;  // nothing upstream needs the input gradient
    const MatX<S> dpatch = params.convs[i].w.transpose() * dpre;
    MatX<S> din = MatX<S>::Zero(cache.conv_in[i].rows(), cache.conv_in[i].cols());
    const Eigen::Index cin = cache.conv_in[i].rows();
    for (Eigen::Index j = 0; j < dpatch.cols(); ++j)
      for (Eigen::Index ch = 0; ch < cin; ++ch)
        for (int q = 0; q < c.kernel; ++q)
          din(ch, j * c.stride + q) += dpatch(ch * c.kernel + q, j);
    if (cache.conv_mask[i].size() > 0) din = din.cwiseProduct(cache.conv_mask[i]);
    dout = std::move(din);
  }
}

}  // namespace

template <typename S>
void apply_dropout(MatX<S>& x, double rate, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (rate == 0.0 || rng == nullptr) return;
  x = x.cwiseProduct(dropout_mask<S>(x.rows(), x.cols(), rate, *rng));
}

template <typename S>
VecX<S> predict_probs(const NetworkSpec& spec, const ParamSet<S>& params, const MatF& x) {
  ForwardCache<S> cache;
  run_forward(spec, params, x, nullptr, cache);
  return cache.probs;
}

template <typename S>
S compute_loss(const NetworkSpec& spec, const ParamSet<S>& params, const MatF& x, int label) {
  if (label < 0 || label >= spec.classes) throw std::invalid_argument("label out of range");
  ForwardCache<S> cache;
  run_forward(spec, params, x, nullptr, cache);
  return loss_from_cache(cache, label);
}

template <typename S>
S forward_backward(const NetworkSpec& spec, const ParamSet<S>& params, const MatF& x, int label,
                   ParamSet<S>& grads, Rng* dropout_rng) {
  if (label < 0 || label >= spec.classes) throw std::invalid_argument("label out of range");
  ForwardCache<S> cache;
  run_forward(spec, params, x, dropout_rng, cache);
  run_backward(spec, params, cache, label, grads);
  return loss_from_cache(cache, label);
}

ModelState init_model(const NetworkSpec& spec, std::uint64_t seed) {
  ModelState m;
  m.spec = spec;
  m.params = init_params<float>(spec, seed);
  return m;
}

namespace {

void zero_fill(ParamSet<float>& p) {
  for (auto [ptr, len] : tensor_views(p)) std::fill(ptr, ptr + len, 0.0f);
}

void accumulate(ParamSet<float>& dst, const ParamSet<float>& src) {
  auto dv = tensor_views(dst);
  auto sv = tensor_views(src);
  for (std::size_t i = 0; i < dv.size(); ++i)
    for (std::ptrdiff_t j = 0; j < dv[i].second; ++j) dv[i].first[j] += sv[i].first[j];
}

struct SampleOutcome {
  double loss_sum = 0.0;
  int correct = 0;
};

}  // namespace

std::vector<EpochStats> train(ModelState& model, std::vector<features::FeatureSeries>& data,
                              const std::vector<int>& labels, const TrainConfig& config) {
  model.spec.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.size() != labels.size()) throw std::invalid_argument("train: labels/data size mismatch");
  if (config.batch_size < 1 || config.epochs < 1 || config.learning_rate <= 0.0)
    throw std::invalid_argument("train: bad batch size, epoch count, or learning rate");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= model.spec.classes)
      throw std::invalid_argument("train: label out of range at sample " + std::to_string(i));
    if (data[i].dim() != model.spec.input_dim)
      throw std::invalid_argument("train: feature dimension mismatch at " + data[i].instance_id);
    if (data[i].length() < model.spec.min_input_length())
      throw std::invalid_argument("train: sample too short for network: " + data[i].instance_id);
  }

  const int n = static_cast<int>(data.size());
  const std::ptrdiff_t total = param_count(model.params);
  std::vector<double> opt_m(total, 0.0), opt_v(total, 0.0);

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  Rng shuffle_root(config.seed);
  std::vector<EpochStats> stats;
  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;

  ParamSet<float> batch_grads = zero_params<float>(model.spec);
  const int threads = std::max(1, config.threads);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.reshuffle_per_epoch)
      features::reshuffle_epoch(data, config.reshuffle_seed, static_cast<std::uint64_t>(epoch));
    {
      Rng r = shuffle_root.stream(0x45504f4348ull + epoch);  // epoch order stream
      r.shuffle(order.begin(), order.end());
    }

    double epoch_loss = 0.0;
    int epoch_correct = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int bn = std::min(config.batch_size, n - start);
      zero_fill(batch_grads);

      auto process = [&](int lo, int hi, ParamSet<float>& grads, SampleOutcome& out) {
        for (int s = lo; s < hi; ++s) {
          const int idx = order[start + s];
          // per-sample stream keyed on (epoch, dataset index): thread-safe
          // and independent of how the batch is chunked
          Rng drng = shuffle_root.stream(0x44524f50ull ^
                                         (static_cast<std::uint64_t>(epoch) << 32 | idx));
          ForwardCache<float> cache;
          run_forward(model.spec, model.params, data[idx].m, &drng, cache);
          run_backward(model.spec, model.params, cache, labels[idx], grads);
          out.loss_sum += loss_from_cache(cache, labels[idx]);
          Eigen::Index arg = 0;
          cache.probs.maxCoeff(&arg);
          if (static_cast<int>(arg) == labels[idx]) ++out.correct;
        }
      };

      const int nthreads = std::min(threads, bn);
      if (nthreads <= 1) {
        SampleOutcome out;
        process(0, bn, batch_grads, out);
        epoch_loss += out.loss_sum;
        epoch_correct += out.correct;
      } else {
        std::vector<ParamSet<float>> local(nthreads);
        std::vector<SampleOutcome> outs(nthreads);
        std::vector<std::thread> pool;
        const int chunk = (bn + nthreads - 1) / nthreads;
        for (int k = 0; k < nthreads; ++k) {
          local[k] = zero_params<float>(model.spec);
          const int lo = k * chunk, hi = std::min(bn, lo + chunk);
          pool.emplace_back([&, k, lo, hi] { process(lo, hi, local[k], outs[k]); });
        }
        for (auto& th : pool) th.join();
        for (int k = 0; k < nthreads; ++k) {  // fixed reduction order
          accumulate(batch_grads, local[k]);
          epoch_loss += outs[k].loss_sum;
          epoch_correct += outs[k].correct;
        }
      }

      // batch mean, then global-norm clip
      const double inv_bn = 1.0 / bn;
      auto gv = tensor_views(batch_grads);
      double norm_sq = 0.0;
      for (auto [ptr, len] : gv)
        for (std::ptrdiff_t j = 0; j < len; ++j) {
          const double g = ptr[j] * inv_bn;
          norm_sq += g * g;
        }
      double scale = inv_bn;
      if (config.grad_clip_norm > 0.0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > config.grad_clip_norm) scale *= config.grad_clip_norm / norm;
      }

      ++model.step;
      auto pv = tensor_views(model.params);
      std::ptrdiff_t off = 0;
      if (config.optimizer == Optimizer::Adam) {
        const double b1 = config.adam_beta1, b2 = config.adam_beta2;
        const double corr1 = 1.0 - std::pow(b1, static_cast<double>(model.step));
        const double corr2 = 1.0 - std::pow(b2, static_cast<double>(model.step));
        for (std::size_t i = 0; i < gv.size(); ++i) {
          float* p = pv[i].first;
          const float* g = gv[i].first;
          for (std::ptrdiff_t j = 0; j < gv[i].second; ++j, ++off) {
            const double grad = g[j] * scale;
            opt_m[off] = b1 * opt_m[off] + (1.0 - b1) * grad;
            opt_v[off] = b2 * opt_v[off] + (1.0 - b2) * grad * grad;
            const double mhat = opt_m[off] / corr1;
            const double vhat = opt_v[off] / corr2;
            p[j] -= static_cast<float>(config.learning_rate * mhat /
                                       (std::sqrt(vhat) + config.adam_eps));
          }
        }
      } else {
        for (std::size_t i = 0; i < gv.size(); ++i) {
          float* p = pv[i].first;
          const float* g = gv[i].first;
          for (std::ptrdiff_t j = 0; j < gv[i].second; ++j, ++off) {
            opt_m[off] = config.momentum * opt_m[off] + g[j] * scale;
            p[j] -= static_cast<float>(config.learning_rate * opt_m[off]);
          }
        }
      }
    }

    EpochStats es;
    es.epoch = epoch;
    es.loss = epoch_loss / n;
    es.accuracy = static_cast<double>(epoch_correct) / n;
    if (!std::isfinite(es.loss)) throw std::runtime_error("training diverged (non-finite loss)");
    stats.push_back(es);

    if (config.early_stop_patience > 0) {
      if (es.loss < best_loss) {
        best_loss = es.loss;
        stall = 0;
      } else if (++stall >= config.early_stop_patience) {
        break;
      }
    }
  }
  return stats;
}

VecX<float> predict(const ModelState& model, const features::FeatureSeries& x) {
  return predict_probs(model.spec, model.params, x.m);
}

VecX<float> ensemble_predict(const std::vector<const ModelState*>& models,
                             const features::FeatureSeries& x) {
  if (models.empty()) throw std::invalid_argument("ensemble: no models");
  const int classes = models[0]->spec.classes;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(classes);
  for (const ModelState* m : models) {
    if (m->spec.classes != classes)
      throw std::invalid_argument("ensemble: class count mismatch");
    acc += predict(*m, x).cast<double>();
  }
  acc /= static_cast<double>(models.size());
  return acc.cast<float>();
}

namespace {

void put_u32_bytes(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

constexpr char kModelMagic[4] = {'B', 'H', 'M', '1'};

}  // namespace

void save_model(const ModelState& model, const std::string& path) {
  json meta;
  meta["version"] = 1;
  meta["spec"] = model.spec.to_text();
  meta["input_dim"] = model.spec.input_dim;
  meta["classes"] = model.spec.classes;
  meta["step"] = model.step;
  json convs = json::array();
  for (const auto& c : model.spec.convs)
    convs.push_back({c.filters, c.kernel, c.stride, c.dropout});
  meta["convs"] = std::move(convs);
  meta["gru"] = {model.spec.gru.units, model.spec.gru.dropout};
  auto views = tensor_views(model.params);
  json sizes = json::array();
  for (auto [ptr, len] : views) sizes.push_back(len);
  meta["tensors"] = std::move(sizes);
  const std::string meta_str = meta.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kModelMagic, kModelMagic + 4);
  put_u32_bytes(out, static_cast<std::uint32_t>(meta_str.size()));
  out.insert(out.end(), meta_str.begin(), meta_str.end());
  for (auto [ptr, len] : views) {
    const std::size_t off = out.size();
    out.resize(off + sizeof(float) * len);
    std::memcpy(out.data() + off, ptr, sizeof(float) * len);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelState load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (data.size() < 8 || std::memcmp(data.data(), kModelMagic, 4) != 0)
    throw std::runtime_error("not a model checkpoint (bad magic): " + path);
  const std::uint32_t meta_len = std::uint32_t(data[4]) | std::uint32_t(data[5]) << 8 |
                                 std::uint32_t(data[6]) << 16 | std::uint32_t(data[7]) << 24;
  if (8 + static_cast<std::size_t>(meta_len) > data.size())
    throw std::runtime_error("truncated checkpoint metadata: " + path);
  json meta = json::parse(data.begin() + 8, data.begin() + 8 + meta_len);
  if (meta.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version: " + path);

  ModelState model;
  model.spec.input_dim = meta.at("input_dim").get<int>();
  model.spec.classes = meta.at("classes").get<int>();
  for (const auto& c : meta.at("convs")) {
    Conv1dSpec cs;
    cs.filters = c.at(0).get<int>();
    cs.kernel = c.at(1).get<int>();
    cs.stride = c.at(2).get<int>();
    cs.dropout = c.at(3).get<double>();
    model.spec.convs.push_back(cs);
  }
  model.spec.gru.units = meta.at("gru").at(0).get<int>();
  model.spec.gru.dropout = meta.at("gru").at(1).get<double>();
  model.step = meta.at("step").get<std::int64_t>();
  model.spec.validate();

  model.params = zero_params<float>(model.spec);
  auto views = tensor_views(model.params);
  const auto& sizes = meta.at("tensors");
  if (sizes.size() != views.size())
    throw std::runtime_error("checkpoint tensor count mismatch: " + path);
  std::size_t off = 8 + meta_len;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::ptrdiff_t len = sizes[i].get<std::ptrdiff_t>();
    if (len != views[i].second)
      throw std::runtime_error("checkpoint tensor shape mismatch: " + path);
    if (off + sizeof(float) * len > data.size())
      throw std::runtime_error("truncated checkpoint payload: " + path);
    std::memcpy(views[i].first, data.data() + off, sizeof(float) * len);
    off += sizeof(float) * len;
  }
  if (off != data.size()) throw std::runtime_error("trailing bytes in checkpoint: " + path);
  return model;
}

// The float instantiations drive training and inference; the double ones back
// finite-difference gradient verification.
template std::vector<std::pair<float*, std::ptrdiff_t>> tensor_views(ParamSet<float>&);
template std::vector<std::pair<double*, std::ptrdiff_t>> tensor_views(ParamSet<double>&);
template std::vector<std::pair<const float*, std::ptrdiff_t>> tensor_views(const ParamSet<float>&);
template std::vector<std::pair<const double*, std::ptrdiff_t>> tensor_views(
    const ParamSet<double>&);
template std::ptrdiff_t param_count(const ParamSet<float>&);
template std::ptrdiff_t param_count(const ParamSet<double>&);
template ParamSet<float> zero_params(const NetworkSpec&);
template ParamSet<double> zero_params(const NetworkSpec&);
template ParamSet<float> init_params(const NetworkSpec&, std::uint64_t);
template ParamSet<double> init_params(const NetworkSpec&, std::uint64_t);
template void apply_dropout(MatX<float>&, double, Rng*);
template void apply_dropout(MatX<double>&, double, Rng*);
template VecX<float> predict_probs(const NetworkSpec&, const ParamSet<float>&, const MatF&);
template VecX<double> predict_probs(const NetworkSpec&, const ParamSet<double>&, const MatF&);
template float compute_loss(const NetworkSpec&, const ParamSet<float>&, const MatF&, int);
template double compute_loss(const NetworkSpec&, const ParamSet<double>&, const MatF&, int);
template float forward_backward(const NetworkSpec&, const ParamSet<float>&, const MatF&, int,
                                ParamSet<float>&, Rng*);
template double forward_backward(const NetworkSpec&, const ParamSet<double>&, const MatF&, int,
                                 ParamSet<double>&, Rng*);

}  // namespace breathid::nn
