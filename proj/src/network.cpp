#include "dem/network.hpp"

#include "dem/binary_io.hpp"
#include "dem/symmetry.hpp"

#include <cmath>
#include <fstream>

namespace dem {

using nlohmann::json;

namespace {

struct Slot {
  Eigen::Index off = 0, rows = 0, cols = 0;
};

class Layout {
 public:
  Slot add(Eigen::Index rows, Eigen::Index cols = 1) {
    Slot s{total_, rows, cols};
    total_ += rows * cols;
    return s;
  }
  Eigen::Index total() const { return total_; }

 private:
  Eigen::Index total_ = 0;
};

Eigen::Map<const Mat> view(const Vec& p, const Slot& s) { return {p.data() + s.off, s.rows, s.cols}; }
Eigen::Map<Mat> view(Vec& p, const Slot& s) { return {p.data() + s.off, s.rows, s.cols}; }
Eigen::Map<const Vec> vview(const Vec& p, const Slot& s) { return {p.data() + s.off, s.rows * s.cols}; }
Eigen::Map<Vec> vview(Vec& p, const Slot& s) { return {p.data() + s.off, s.rows * s.cols}; }

Mat silu(const Mat& x) { return (x.array() / (1.0 + (-x.array()).exp())).matrix(); }

// d silu / dx evaluated at pre-activation x.
Mat silu_grad(const Mat& x) {
  const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x.array()).exp());
  return (sig * (1.0 + x.array() * (1.0 - sig))).matrix();
}

void init_uniform(Vec& p, const Slot& s, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < s.rows * s.cols; ++i) p(s.off + i) = rng.uniform(-bound, bound);
}

Mat time_features(const Vec& ts, const Vec& freqs) {
  const auto p = freqs.size();
  Mat tf(2 * p, ts.size());
  for (Eigen::Index b = 0; b < ts.size(); ++b)
    for (Eigen::Index k = 0; k < p; ++k) {
      tf(2 * k, b) = std::sin(freqs(k) * ts(b));
      tf(2 * k + 1, b) = std::cos(freqs(k) * ts(b));
    }
  return tf;
}

void check_times(const Vec& ts) {
  for (double t : ts)
    if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::Domain, "network time must lie in [0, 1]");
}

}  // namespace

Vec sinusoid_frequencies(int pairs, double f_max) {
  Vec f(pairs);
  for (int k = 0; k < pairs; ++k) f(k) = pairs == 1 ? 1.0 : std::pow(f_max, static_cast<double>(k) / (pairs - 1));
  return f;
}

json ArchSpec::to_json() const {
  return json{{"type", type == ArchType::Mlp ? "mlp" : "egnn"},
              {"dim", dim},
              {"hidden", hidden},
              {"layers", layers},
              {"emb_pairs", emb_pairs},
              {"t_freq_max", t_freq_max},
              {"x_freq_max", x_freq_max},
              {"n_particles", n_particles},
              {"space_dim", space_dim},
              {"coord_range", coord_range},
              {"out_range", out_range}};
}

ArchSpec ArchSpec::from_json(const json& j) {
  ArchSpec a;
  const std::string type = j.at("type").get<std::string>();
  if (type == "mlp") a.type = ArchType::Mlp;
  else if (type == "egnn") a.type = ArchType::Egnn;
  else throw Error(Errc::Io, "unknown architecture type " + type);
  a.dim = j.at("dim").get<int>();
  a.hidden = j.at("hidden").get<int>();
  a.layers = j.at("layers").get<int>();
  a.emb_pairs = j.at("emb_pairs").get<int>();
  a.t_freq_max = j.at("t_freq_max").get<double>();
  a.x_freq_max = j.at("x_freq_max").get<double>();
  a.n_particles = j.at("n_particles").get<int>();
  a.space_dim = j.at("space_dim").get<int>();
  a.coord_range = j.value("coord_range", a.coord_range);
  a.out_range = j.value("out_range", a.out_range);
  return a;
}

Mat ScoreNet::forward(const Mat& xs, double t) const { return forward(xs, Vec::Constant(xs.cols(), t)); }

ScoreField ScoreNet::as_field() const {
  return [this](const Mat& xs, double t) { return forward(xs, t); };
}

// ---------------------------------------------------------------------------
// MLP with sinusoidal time and coordinate embeddings.

class MlpScoreNet final : public ScoreNet {
 public:
  explicit MlpScoreNet(ArchSpec a) : ScoreNet(std::move(a)) {
    if (arch_.dim < 1 || arch_.hidden < 1 || arch_.layers < 1 || arch_.emb_pairs < 1)
      throw Error(Errc::InvalidArgument, "invalid MLP architecture");
    const int d = arch_.dim, h = arch_.hidden;
    t_freq_ = sinusoid_frequencies(arch_.emb_pairs, arch_.t_freq_max);
    x_freq_ = sinusoid_frequencies(std::max(1, arch_.emb_pairs / d), arch_.x_freq_max);
    x_feat_ = d + 2 * d * static_cast<int>(x_freq_.size());
    Layout lay;
    wt_ = lay.add(h, 2 * arch_.emb_pairs);
    wx_ = lay.add(h, x_feat_);
    b0_ = lay.add(h);
    for (int l = 1; l < arch_.layers; ++l) {
      w_.push_back(lay.add(h, h));
      b_.push_back(lay.add(h));
    }
    wo_ = lay.add(d, h);
    bo_ = lay.add(d);
    params_ = Vec::Zero(lay.total());
  }

  void initialize(Rng& rng) {
    params_.setZero();
    const double in_bound = 1.0 / std::sqrt(2.0 * arch_.emb_pairs + x_feat_);
    init_uniform(params_, wt_, in_bound, rng);
    init_uniform(params_, wx_, in_bound, rng);
    init_uniform(params_, b0_, in_bound, rng);
    const double hb = 1.0 / std::sqrt(static_cast<double>(arch_.hidden));
    for (std::size_t l = 0; l < w_.size(); ++l) {
      init_uniform(params_, w_[l], hb, rng);
      init_uniform(params_, b_[l], hb, rng);
    }
    // output layer stays zero: the untrained field is identically 0
  }

  Mat forward(const Mat& xs, const Vec& ts) const override {
    Cache c;
    run(xs, ts, c);
    return c.out;
  }

  double loss_and_grad(const Mat& xs, const Vec& ts, const Mat& targets, Vec& grad) const override {
    if (targets.rows() != xs.rows() || targets.cols() != xs.cols())
      throw Error(Errc::ShapeMismatch, "target batch shape differs from input batch");
    Cache c;
    run(xs, ts, c);
    const double bsz = static_cast<double>(xs.cols());
    const Mat resid = c.out - targets;
    const double loss = resid.squaredNorm() / bsz;
    grad = Vec::Zero(params_.size());
    const Mat dout = (2.0 / bsz) * resid;
    view(grad, wo_) = dout * c.act.back().transpose();
    vview(grad, bo_) = dout.rowwise().sum();
    Mat dact = view(params_, wo_).transpose() * dout;
    for (int l = arch_.layers - 1; l >= 1; --l) {
      const Mat dpre = dact.cwiseProduct(silu_grad(c.pre[static_cast<std::size_t>(l)]));
      view(grad, w_[static_cast<std::size_t>(l - 1)]) = dpre * c.act[static_cast<std::size_t>(l - 1)].transpose();
      vview(grad, b_[static_cast<std::size_t>(l - 1)]) = dpre.rowwise().sum();
      dact = view(params_, w_[static_cast<std::size_t>(l - 1)]).transpose() * dpre;
    }
    const Mat dpre0 = dact.cwiseProduct(silu_grad(c.pre[0]));
    view(grad, wt_) = dpre0 * c.tf.transpose();
    view(grad, wx_) = dpre0 * c.xf.transpose();
    vview(grad, b0_) = dpre0.rowwise().sum();
    return loss;
  }

 private:
  struct Cache {
    Mat tf, xf;
    std::vector<Mat> pre, act;
    Mat out;
  };

  void run(const Mat& xs, const Vec& ts, Cache& c) const {
    if (xs.rows() != arch_.dim || ts.size() != xs.cols())
      throw Error(Errc::ShapeMismatch, "MLP input has the wrong shape");
    check_times(ts);
    const auto bsz = xs.cols();
    const int d = arch_.dim;
    const auto nf = x_freq_.size();
    c.tf = time_features(ts, t_freq_);
    c.xf.resize(x_feat_, bsz);
    for (Eigen::Index b = 0; b < bsz; ++b) {
      c.xf.col(b).head(d) = xs.col(b);
      Eigen::Index r = d;
      for (int i = 0; i < d; ++i)
        for (Eigen::Index k = 0; k < nf; ++k) {
          c.xf(r++, b) = std::sin(x_freq_(k) * xs(i, b));
          c.xf(r++, b) = std::cos(x_freq_(k) * xs(i, b));
        }
    }
    c.pre.clear();
    c.act.clear();
    Mat pre = view(params_, wt_) * c.tf + view(params_, wx_) * c.xf;
    pre.colwise() += vview(params_, b0_);
    c.act.push_back(silu(pre));
    c.pre.push_back(std::move(pre));
    for (std::size_t l = 0; l < w_.size(); ++l) {
      Mat p = view(params_, w_[l]) * c.act.back();
      p.colwise() += vview(params_, b_[l]);
      c.act.push_back(silu(p));
      c.pre.push_back(std::move(p));
    }
    c.out = view(params_, wo_) * c.act.back();
    c.out.colwise() += vview(params_, bo_);
  }

  Vec t_freq_, x_freq_;
  int x_feat_ = 0;
  Slot wt_, wx_, b0_, wo_, bo_;
  std::vector<Slot> w_, b_;
};

// ---------------------------------------------------------------------------
// E(n)-equivariant message passing network on a fully connected particle graph.
//
//   h^0_i      = W_emb phi(t) + b_emb
//   m_ij       = silu(W2 silu(A h_i + B h_j + c |x_i - x_j|^2 + b1) + b2)
//   r_ij       = (x_i - x_j) / (|x_i - x_j| + 1)
//   x_i       <- x_i + 1/(n-1) sum_j r_ij * coord_range * tanh(wx . m_ij + bx)
//   h_i       <- h_i + W4 silu(C h_i + D sum_j m_ij + b3) + b4
//
// The last layer only forms messages; its head (wo, bo) produces the score
// s_i = 1/(n-1) sum_j r_ij * out_range * tanh(wo . m_ij + bo), projected to the
// mean-free subspace. The head is zero-initialized. Normalized edge vectors and
// tanh weights keep the output bounded far from the data, which is what keeps
// early reverse-SDE rollouts from running away.

class EgnnScoreNet final : public ScoreNet {
 public:
  explicit EgnnScoreNet(ArchSpec a) : ScoreNet(std::move(a)) {
    if (arch_.n_particles < 2 || arch_.space_dim < 1 || arch_.n_particles * arch_.space_dim != arch_.dim ||
        arch_.hidden < 1 || arch_.layers < 1)
      throw Error(Errc::InvalidArgument, "invalid EGNN architecture");
    const int h = arch_.hidden;
    t_freq_ = sinusoid_frequencies(arch_.emb_pairs, arch_.t_freq_max);
    Layout lay;
    wemb_ = lay.add(h, 2 * arch_.emb_pairs);
    bemb_ = lay.add(h);
    for (int l = 0; l < arch_.layers; ++l) {
      LayerSlots s;
      s.last = l == arch_.layers - 1;
      s.A = lay.add(h, h);
      s.B = lay.add(h, h);
      s.c = lay.add(h);
      s.b1 = lay.add(h);
      s.W2 = lay.add(h, h);
      s.b2 = lay.add(h);
      if (!s.last) {
        s.wx = lay.add(h);
        s.bx = lay.add(1);
        s.C = lay.add(h, h);
        s.D = lay.add(h, h);
        s.b3 = lay.add(h);
        s.W4 = lay.add(h, h);
        s.b4 = lay.add(h);
      }
      layers_.push_back(s);
    }
    wo_ = lay.add(h);
    bo_ = lay.add(1);
    params_ = Vec::Zero(lay.total());
  }

  void initialize(Rng& rng) {
    params_.setZero();
    const double h = arch_.hidden;
    init_uniform(params_, wemb_, 1.0 / std::sqrt(2.0 * arch_.emb_pairs), rng);
    init_uniform(params_, bemb_, 1.0 / std::sqrt(2.0 * arch_.emb_pairs), rng);
    const double e1 = 1.0 / std::sqrt(2.0 * h + 1.0), hb = 1.0 / std::sqrt(h), nb = 1.0 / std::sqrt(2.0 * h);
    for (const auto& s : layers_) {
      init_uniform(params_, s.A, e1, rng);
      init_uniform(params_, s.B, e1, rng);
      init_uniform(params_, s.c, e1, rng);
      init_uniform(params_, s.b1, e1, rng);
      init_uniform(params_, s.W2, hb, rng);
      init_uniform(params_, s.b2, hb, rng);
      if (!s.last) {
        init_uniform(params_, s.wx, 0.001 * std::sqrt(6.0 / (h + 1.0)), rng);
        init_uniform(params_, s.C, nb, rng);
        init_uniform(params_, s.D, nb, rng);
        init_uniform(params_, s.b3, nb, rng);
        init_uniform(params_, s.W4, hb, rng);
        init_uniform(params_, s.b4, hb, rng);
      }
    }
  }

  Mat forward(const Mat& xs, const Vec& ts) const override {
    Cache c;
    run(xs, ts, c);
    return c.out;
  }

  double loss_and_grad(const Mat& xs, const Vec& ts, const Mat& targets, Vec& grad) const override {
    if (targets.rows() != xs.rows() || targets.cols() != xs.cols())
      throw Error(Errc::ShapeMismatch, "target batch shape differs from input batch");
    Cache c;
    run(xs, ts, c);
    const double bsz = static_cast<double>(xs.cols());
    const Mat resid = c.out - targets;
    const double loss = resid.squaredNorm() / bsz;
    grad = Vec::Zero(params_.size());

    const int n = arch_.n_particles, s = arch_.space_dim;
    const Eigen::Index nodes = c.nodes, edges = c.edges;
    const double inv = 1.0 / (n - 1);

    // d loss / d raw output, through the mean-free projection (symmetric).
    Mat dout = (2.0 / bsz) * resid;
    project_mean_free_columns(dout, ParticleShape{n, s});
    const Eigen::Map<const Mat> draw(dout.data(), s, nodes);

    Mat dH = Mat::Zero(arch_.hidden, nodes);
    Mat dX = Mat::Zero(s, nodes);

    for (int l = arch_.layers - 1; l >= 0; --l) {
      const auto& ls = layers_[static_cast<std::size_t>(l)];
      const auto& lc = c.layers[static_cast<std::size_t>(l)];
      Mat dm(arch_.hidden, edges);
      Mat dR(s, edges);
      if (ls.last) {
        Vec dwo(edges);
        for (Eigen::Index e = 0; e < edges; ++e) {
          const Eigen::Index i = c.src[static_cast<std::size_t>(e)];
          const double th = c.tout(e);
          dwo(e) = inv * draw.col(i).dot(lc.Rn.col(e)) * arch_.out_range * (1.0 - th * th);
          dR.col(e) = (inv * arch_.out_range * th) * draw.col(i);
        }
        vview(grad, wo_) = lc.m * dwo;
        grad(bo_.off) = dwo.sum();
        dm = vview(params_, wo_) * dwo.transpose();
      } else {
        // feature update
        view(grad, ls.W4) = dH * lc.u.transpose();
        vview(grad, ls.b4) = dH.rowwise().sum();
        const Mat dpre3 = (view(params_, ls.W4).transpose() * dH).cwiseProduct(silu_grad(lc.pre3));
        view(grad, ls.C) = dpre3 * lc.H.transpose();
        view(grad, ls.D) = dpre3 * lc.magg.transpose();
        vview(grad, ls.b3) = dpre3.rowwise().sum();
        dH += view(params_, ls.C).transpose() * dpre3;
        const Mat dmagg = view(params_, ls.D).transpose() * dpre3;
        // coordinate update; dX carries d loss / d x_out of this layer
        Vec dw(edges);
        for (Eigen::Index e = 0; e < edges; ++e) {
          const Eigen::Index i = c.src[static_cast<std::size_t>(e)];
          dm.col(e) = dmagg.col(i);
          const double th = lc.tw(e);
          dw(e) = inv * dX.col(i).dot(lc.Rn.col(e)) * arch_.coord_range * (1.0 - th * th);
          dR.col(e) = (inv * arch_.coord_range * th) * dX.col(i);
        }
        vview(grad, ls.wx) = lc.m * dw;
        grad(ls.bx.off) = dw.sum();
        dm += vview(params_, ls.wx) * dw.transpose();
      }
      // edge MLP
      const Mat dpre2 = dm.cwiseProduct(silu_grad(lc.pre2));
      view(grad, ls.W2) = dpre2 * lc.a.transpose();
      vview(grad, ls.b2) = dpre2.rowwise().sum();
      const Mat dpre1 = (view(params_, ls.W2).transpose() * dpre2).cwiseProduct(silu_grad(lc.pre1));
      vview(grad, ls.c) = dpre1 * lc.d2;
      vview(grad, ls.b1) = dpre1.rowwise().sum();
      // dR so far is with respect to the normalized vectors r / (|r| + 1)
      for (Eigen::Index e = 0; e < edges; ++e) {
        const double rho = lc.rho(e), q = rho + 1.0;
        const double proj = rho > 0.0 ? lc.R.col(e).dot(dR.col(e)) / (rho * q * q) : 0.0;
        dR.col(e) = dR.col(e) / q - proj * lc.R.col(e);
      }
      Mat dAH = Mat::Zero(arch_.hidden, nodes), dBH = Mat::Zero(arch_.hidden, nodes);
      const auto cvec = vview(params_, ls.c);
      for (Eigen::Index e = 0; e < edges; ++e) {
        const Eigen::Index i = c.src[static_cast<std::size_t>(e)], j = c.dst[static_cast<std::size_t>(e)];
        dAH.col(i) += dpre1.col(e);
        dBH.col(j) += dpre1.col(e);
        const double dd2 = cvec.dot(dpre1.col(e));
        dR.col(e) += (2.0 * dd2) * lc.R.col(e);
      }
      view(grad, ls.A) = dAH * lc.H.transpose();
      view(grad, ls.B) = dBH * lc.H.transpose();
      dH += view(params_, ls.A).transpose() * dAH + view(params_, ls.B).transpose() * dBH;
      for (Eigen::Index e = 0; e < edges; ++e) {
        dX.col(c.src[static_cast<std::size_t>(e)]) += dR.col(e);
        dX.col(c.dst[static_cast<std::size_t>(e)]) -= dR.col(e);
      }
    }
    // embedding
    const auto graphs = xs.cols();
    Mat demb = Mat::Zero(arch_.hidden, graphs);
    for (Eigen::Index g = 0; g < graphs; ++g)
      for (int i = 0; i < n; ++i) demb.col(g) += dH.col(g * n + i);
    view(grad, wemb_) = demb * c.tf.transpose();
    vview(grad, bemb_) = demb.rowwise().sum();
    return loss;
  }

 private:
  struct LayerSlots {
    bool last = false;
    Slot A, B, c, b1, W2, b2, wx, bx, C, D, b3, W4, b4;
  };
  struct LayerCache {
    Mat H, X, R, Rn;
    Vec d2, rho;
    Mat pre1, a, pre2, m;
    Vec tw;
    Mat magg, pre3, u;
  };
  struct Cache {
    Eigen::Index nodes = 0, edges = 0;
    std::vector<Eigen::Index> src, dst;
    Mat tf;
    std::vector<LayerCache> layers;
    Vec tout;
    Mat out;
  };

  void run(const Mat& xs, const Vec& ts, Cache& c) const {
    if (xs.rows() != arch_.dim || ts.size() != xs.cols())
      throw Error(Errc::ShapeMismatch, "EGNN input has the wrong shape");
    check_times(ts);
    const int n = arch_.n_particles, s = arch_.space_dim, h = arch_.hidden;
    const auto graphs = xs.cols();
    c.nodes = graphs * n;
    c.edges = graphs * n * (n - 1);
    c.src.resize(static_cast<std::size_t>(c.edges));
    c.dst.resize(static_cast<std::size_t>(c.edges));
    {
      std::size_t e = 0;
      for (Eigen::Index g = 0; g < graphs; ++g)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            if (i != j) {
              c.src[e] = g * n + i;
              c.dst[e] = g * n + j;
              ++e;
            }
    }
    const double inv = 1.0 / (n - 1);
    c.tf = time_features(ts, t_freq_);
    Mat emb = view(params_, wemb_) * c.tf;
    emb.colwise() += vview(params_, bemb_);
    Mat H(h, c.nodes);
    for (Eigen::Index g = 0; g < graphs; ++g)
      for (int i = 0; i < n; ++i) H.col(g * n + i) = emb.col(g);
    Mat X = Eigen::Map<const Mat>(xs.data(), s, c.nodes);

    c.layers.clear();
    c.layers.resize(layers_.size());
    Mat raw;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& ls = layers_[l];
      auto& lc = c.layers[l];
      lc.H = H;
      lc.X = X;
      lc.R.resize(s, c.edges);
      lc.Rn.resize(s, c.edges);
      lc.d2.resize(c.edges);
      lc.rho.resize(c.edges);
      const Mat AH = view(params_, ls.A) * H;
      const Mat BH = view(params_, ls.B) * H;
      const auto cvec = vview(params_, ls.c);
      const auto b1 = vview(params_, ls.b1);
      lc.pre1.resize(h, c.edges);
      for (Eigen::Index e = 0; e < c.edges; ++e) {
        const Eigen::Index i = c.src[static_cast<std::size_t>(e)], j = c.dst[static_cast<std::size_t>(e)];
        lc.R.col(e) = X.col(i) - X.col(j);
        lc.d2(e) = lc.R.col(e).squaredNorm();
        lc.rho(e) = std::sqrt(lc.d2(e));
        lc.Rn.col(e) = lc.R.col(e) / (lc.rho(e) + 1.0);
        lc.pre1.col(e) = AH.col(i) + BH.col(j) + lc.d2(e) * cvec + b1;
      }
      lc.a = silu(lc.pre1);
      lc.pre2 = view(params_, ls.W2) * lc.a;
      lc.pre2.colwise() += vview(params_, ls.b2);
      lc.m = silu(lc.pre2);
      if (ls.last) {
        c.tout = (vview(params_, wo_).transpose() * lc.m).transpose();
        c.tout = (c.tout.array() + params_(bo_.off)).tanh();
        raw = Mat::Zero(s, c.nodes);
        for (Eigen::Index e = 0; e < c.edges; ++e)
          raw.col(c.src[static_cast<std::size_t>(e)]) += (inv * arch_.out_range * c.tout(e)) * lc.Rn.col(e);
      } else {
        lc.tw = (vview(params_, ls.wx).transpose() * lc.m).transpose();
        lc.tw = (lc.tw.array() + params_(ls.bx.off)).tanh();
        lc.magg = Mat::Zero(h, c.nodes);
        Mat Xn = X;
        for (Eigen::Index e = 0; e < c.edges; ++e) {
          const Eigen::Index i = c.src[static_cast<std::size_t>(e)];
          Xn.col(i) += (inv * arch_.coord_range * lc.tw(e)) * lc.Rn.col(e);
          lc.magg.col(i) += lc.m.col(e);
        }
        lc.pre3 = view(params_, ls.C) * H + view(params_, ls.D) * lc.magg;
        lc.pre3.colwise() += vview(params_, ls.b3);
        lc.u = silu(lc.pre3);
        Mat Hn = H + view(params_, ls.W4) * lc.u;
        Hn.colwise() += vview(params_, ls.b4);
        H = std::move(Hn);
        X = std::move(Xn);
      }
    }
    c.out = Eigen::Map<const Mat>(raw.data(), arch_.dim, graphs);
    project_mean_free_columns(c.out, ParticleShape{n, s});
  }

  Vec t_freq_;
  Slot wemb_, bemb_, wo_, bo_;
  std::vector<LayerSlots> layers_;
};

std::unique_ptr<ScoreNet> ScoreNet::create_uninitialized(const ArchSpec& arch) {
  if (arch.type == ArchType::Mlp) return std::make_unique<MlpScoreNet>(arch);
  return std::make_unique<EgnnScoreNet>(arch);
}

std::unique_ptr<ScoreNet> ScoreNet::create(const ArchSpec& arch, std::uint64_t init_seed) {
  Rng rng(derive_seed(init_seed, streams::kInit));
  if (arch.type == ArchType::Mlp) {
    auto net = std::make_unique<MlpScoreNet>(arch);
    net->initialize(rng);
    return net;
  }
  auto net = std::make_unique<EgnnScoreNet>(arch);
  net->initialize(rng);
  return net;
}

// ---------------------------------------------------------------------------

Mat pinned_forward(const ScoreNet& net, const Target& target, const Mat& xs, double t, double t_pin) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::Domain, "time must lie in [0, 1]");
  if (t < t_pin) {
    Mat out(xs.rows(), xs.cols());
    Vec g;
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      target.energy_grad(xs.col(j), g);
      out.col(j) = -g;
    }
    return out;
  }
  return net.forward(xs, t);
}

ScoreField pinned_field(const ScoreNet& net, TargetPtr target, double t_pin) {
  if (t_pin <= 0.0) return net.as_field();
  return [&net, target, t_pin](const Mat& xs, double t) {
    if (t >= t_pin) return net.forward(xs, t);
    // invalid configurations propagate as NaN so the integrator drops them
    Mat out(xs.rows(), xs.cols());
    Vec g(xs.rows());
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      double e = 0.0;
      if (target->try_eval(xs.col(j), e, &g)) out.col(j) = -g;
      else out.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    return out;
  };
}

double dem_loss_and_grad_batch(const ScoreNet& net, const Mat& xs, const Vec& ts, const Mat& targets, Vec& grad) {
  if (!targets.allFinite()) throw Error(Errc::NonFiniteLoss, "regression target is not finite");
  const double loss = net.loss_and_grad(xs, ts, targets, grad);
  if (!std::isfinite(loss) || !grad.allFinite()) throw Error(Errc::NonFiniteLoss, "DEM loss is not finite");
  return loss;
}

double dem_loss_and_grad(const ScoreNet& net, const VecRef& x_t, double t, const VecRef& target_score, Vec& grad) {
  const Mat xs = x_t;
  const Mat tg = target_score;
  return dem_loss_and_grad_batch(net, xs, Vec::Constant(1, t), tg, grad);
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_params(Eigen::Index n, double lr) {
  AdamState s;
  s.m = Vec::Zero(n);
  s.v = Vec::Zero(n);
  s.lr = lr;
  return s;
}

void AdamState::update(Vec& params, const Vec& grad) {
  if (params.size() != m.size() || grad.size() != m.size())
    throw Error(Errc::ShapeMismatch, "optimizer state does not match parameter count");
  ++step;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const ScoreNet& net, const json& meta, const AdamState* optimizer) {
  json header;
  header["format"] = "dem-checkpoint";
  header["version"] = 1;
  header["arch"] = net.arch().to_json();
  header["meta"] = meta;
  json blocks = json::array();
  blocks.push_back({{"name", "params"}, {"count", net.n_params()}});
  if (optimizer) {
    blocks.push_back({{"name", "adam_m"}, {"count", optimizer->m.size()}});
    blocks.push_back({{"name", "adam_v"}, {"count", optimizer->v.size()}});
    header["adam"] = {{"step", optimizer->step},   {"lr", optimizer->lr},   {"beta1", optimizer->beta1},
                      {"beta2", optimizer->beta2}, {"eps", optimizer->eps}};
  }
  header["blocks"] = blocks;
  header["dtype"] = "f64";
  header["byte_order"] = "LE";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write checkpoint " + path);
  out << header.dump() << '\n';
  write_f64_le(out, net.params().data(), static_cast<std::size_t>(net.n_params()));
  if (optimizer) {
    write_f64_le(out, optimizer->m.data(), static_cast<std::size_t>(optimizer->m.size()));
    write_f64_le(out, optimizer->v.data(), static_cast<std::size_t>(optimizer->v.size()));
  }
  if (!out) throw Error(Errc::Io, "failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::Io, "checkpoint has no header: " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(Errc::Io, "checkpoint header is not JSON: " + std::string(e.what()));
  }
  Checkpoint ck;
  try {
    if (header.at("format") != "dem-checkpoint") throw Error(Errc::Io, "not a dem checkpoint: " + path);
    ck.net = ScoreNet::create_uninitialized(ArchSpec::from_json(header.at("arch")));
    ck.meta = header.value("meta", json::object());
    for (const auto& b : header.at("blocks")) {
      const std::string name = b.at("name");
      const auto count = b.at("count").get<Eigen::Index>();
      Vec data(count);
      read_f64_le(in, data.data(), static_cast<std::size_t>(count));
      if (name == "params") {
        if (count != ck.net->n_params()) throw Error(Errc::Io, "checkpoint parameter count mismatch");
        ck.net->params() = std::move(data);
      } else if (name == "adam_m" || name == "adam_v") {
        if (!ck.optimizer) {
          const auto& a = header.at("adam");
          AdamState st;
          st.step = a.at("step").get<long long>();
          st.lr = a.at("lr");
          st.beta1 = a.at("beta1");
          st.beta2 = a.at("beta2");
          st.eps = a.at("eps");
          ck.optimizer = st;
        }
        (name == "adam_m" ? ck.optimizer->m : ck.optimizer->v) = std::move(data);
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::Io, "malformed checkpoint header: " + std::string(e.what()));
  }
  return ck;
}

}  // namespace dem
