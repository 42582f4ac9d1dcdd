#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "dfmix/common.hpp"

namespace dfmix {

/// Flat view over one named parameter array. The fixed visiting order is
/// what checkpoints, SGD updates, and gradient checks all share.
struct ParamView {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

namespace detail {
inline void add_view(std::vector<ParamView>& out, const std::string& name,
                     Eigen::MatrixXd& m) {
  out.push_back({name, m.data(), m.rows(), m.cols()});
}
inline void add_view(std::vector<ParamView>& out, const std::string& name,
                     Eigen::VectorXd& v) {
  out.push_back({name, v.data(), v.rows(), 1});
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

/// Gated recurrent cell:
///   z = sigmoid(wz x + uz h_prev + bz)
///   r = sigmoid(wr x + ur h_prev + br)
///   n = tanh(wn x + un (r . h_prev) + bn)
///   h = (1 - z) . h_prev + z . n
struct GruCell {
  struct Params {
    Eigen::MatrixXd wz, wr, wn;  // state_dim x input_dim
    Eigen::MatrixXd uz, ur, un;  // state_dim x state_dim
    Eigen::VectorXd bz, br, bn;

    void resize(Eigen::Index input_dim, Eigen::Index state_dim) {
      for (auto* m : {&wz, &wr, &wn}) m->setZero(state_dim, input_dim);
      for (auto* m : {&uz, &ur, &un}) m->setZero(state_dim, state_dim);
      for (auto* v : {&bz, &br, &bn}) v->setZero(state_dim);
    }
    Eigen::Index state_dim() const { return uz.rows(); }
    Eigen::Index input_dim() const { return wz.cols(); }

    void views(const std::string& prefix, std::vector<ParamView>& out) {
      detail::add_view(out, prefix + ".wz", wz);
      detail::add_view(out, prefix + ".wr", wr);
      detail::add_view(out, prefix + ".wn", wn);
      detail::add_view(out, prefix + ".uz", uz);
      detail::add_view(out, prefix + ".ur", ur);
      detail::add_view(out, prefix + ".un", un);
      detail::add_view(out, prefix + ".bz", bz);
      detail::add_view(out, prefix + ".br", br);
      detail::add_view(out, prefix + ".bn", bn);
    }
  };

  struct Cache {
    Eigen::VectorXd x, h_prev, z, r, n;
  };

  static Eigen::VectorXd forward(const Params& p, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& h_prev, Cache* cache) {
    Eigen::VectorXd z = (p.wz * x + p.uz * h_prev + p.bz).unaryExpr(&detail::sigmoid);
    Eigen::VectorXd r = (p.wr * x + p.ur * h_prev + p.br).unaryExpr(&detail::sigmoid);
    Eigen::VectorXd n =
        (p.wn * x + p.un * r.cwiseProduct(h_prev) + p.bn).array().tanh().matrix();
    Eigen::VectorXd h =
        (1.0 - z.array()).matrix().cwiseProduct(h_prev) + z.cwiseProduct(n);
    if (cache) *cache = {x, h_prev, z, r, n};
    return h;
  }

  /// Accumulates parameter gradients into `grad`; overwrites dx and dh_prev.
  static void backward(const Params& p, const Cache& c, const Eigen::VectorXd& dh,
                       Params& grad, Eigen::VectorXd& dx, Eigen::VectorXd& dh_prev) {
    const Eigen::VectorXd dz = dh.cwiseProduct(c.n - c.h_prev);
    const Eigen::VectorXd dn = dh.cwiseProduct(c.z);
    dh_prev = dh.cwiseProduct((1.0 - c.z.array()).matrix());

    const Eigen::VectorXd dan =
        dn.cwiseProduct((1.0 - c.n.array().square()).matrix());
    grad.wn += dan * c.x.transpose();
    grad.un += dan * c.r.cwiseProduct(c.h_prev).transpose();
    grad.bn += dan;
    const Eigen::VectorXd drh = p.un.transpose() * dan;
    const Eigen::VectorXd dr = drh.cwiseProduct(c.h_prev);
    dh_prev += drh.cwiseProduct(c.r);
    dx = p.wn.transpose() * dan;

    const Eigen::VectorXd daz =
        dz.cwiseProduct(c.z.cwiseProduct((1.0 - c.z.array()).matrix()));
    grad.wz += daz * c.x.transpose();
    grad.uz += daz * c.h_prev.transpose();
    grad.bz += daz;
    dx += p.wz.transpose() * daz;
    dh_prev += p.uz.transpose() * daz;

    const Eigen::VectorXd dar =
        dr.cwiseProduct(c.r.cwiseProduct((1.0 - c.r.array()).matrix()));
    grad.wr += dar * c.x.transpose();
    grad.ur += dar * c.h_prev.transpose();
    grad.br += dar;
    dx += p.wr.transpose() * dar;
    dh_prev += p.ur.transpose() * dar;
  }

  static constexpr const char* kName = "gru";
};

/// Ungated linear recurrence, h = w x + u h_prev + b. Handy as a minimal
/// cell whose state can be followed by hand.
struct LinearCell {
  struct Params {
    Eigen::MatrixXd w;  // state_dim x input_dim
    Eigen::MatrixXd u;  // state_dim x state_dim
    Eigen::VectorXd b;

    void resize(Eigen::Index input_dim, Eigen::Index state_dim) {
      w.setZero(state_dim, input_dim);
      u.setZero(state_dim, state_dim);
      b.setZero(state_dim);
    }
    Eigen::Index state_dim() const { return u.rows(); }
    Eigen::Index input_dim() const { return w.cols(); }

    void views(const std::string& prefix, std::vector<ParamView>& out) {
      detail::add_view(out, prefix + ".w", w);
      detail::add_view(out, prefix + ".u", u);
      detail::add_view(out, prefix + ".b", b);
    }
  };

  struct Cache {
    Eigen::VectorXd x, h_prev;
  };

  static Eigen::VectorXd forward(const Params& p, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& h_prev, Cache* cache) {
    if (cache) *cache = {x, h_prev};
    return p.w * x + p.u * h_prev + p.b;
  }

  static void backward(const Params& p, const Cache& c, const Eigen::VectorXd& dh,
                       Params& grad, Eigen::VectorXd& dx, Eigen::VectorXd& dh_prev) {
    grad.w += dh * c.x.transpose();
    grad.u += dh * c.h_prev.transpose();
    grad.b += dh;
    dx = p.w.transpose() * dh;
    dh_prev = p.u.transpose() * dh;
  }

  static constexpr const char* kName = "linear";
};

}  // namespace dfmix
