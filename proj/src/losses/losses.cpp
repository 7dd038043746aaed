#include "efuse/losses/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "efuse/numcore/ops.hpp"

namespace efuse::loss {

namespace {

void require_unit_rows(const nc::Tensor& e, const char* which) {
  for (std::size_t r = 0; r < e.rows(); ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < e.cols(); ++c) n2 += e.at(r, c) * e.at(r, c);
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string("siglip_mm_loss: ") + which + " row " + std::to_string(r) +
                                  " has norm " + std::to_string(std::sqrt(n2)) + ", expected 1");
    }
  }
}

}  // namespace

nc::Tensor diagonal_labels(std::size_t batch) {
  nc::Tensor z({batch, batch}, -1.0);
  for (std::size_t i = 0; i < batch; ++i) z.at(i, i) = 1.0;
  return z;
}

nc::Var siglip_mm_loss(nc::Var e1, nc::Var e2, const nc::Tensor& labels, nc::Var log_t, nc::Var b) {
  const nc::Tensor& a = e1.value();
  const nc::Tensor& c = e2.value();
  if (a.rank() != 2 || a.shape() != c.shape() || a.rows() == 0) {
    throw nc::ShapeError("siglip_mm_loss: embeddings " + nc::shape_str(a.shape()) + " and " + nc::shape_str(c.shape()));
  }
  const std::size_t n = a.rows();
  if (labels.shape() != nc::Shape{n, n}) {
    throw nc::ShapeError("siglip_mm_loss: labels " + nc::shape_str(labels.shape()) + " for batch " + std::to_string(n));
  }
  require_unit_rows(a, "E1");
  require_unit_rows(c, "E2");
  nc::Graph& g = e1.graph();
  nc::Var sim = nc::matmul(e1, nc::transpose(e2));
  nc::Var arg = nc::add(nc::neg(nc::mul(sim, nc::exp(log_t))), b);
  nc::Var terms = nc::softplus(nc::mul(g.constant(labels), arg));
  return nc::scale(nc::sum(terms), 1.0 / static_cast<double>(n));
}

nc::Var mmm_loss(nc::Graph& g, nc::Var logits, std::span<const std::size_t> labels, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("mmm_loss: batch size must be positive");
  if (labels.empty()) return g.constant(nc::Tensor::scalar(0.0));
  const nc::Tensor& l = logits.value();
  if (l.rows() != labels.size()) {
    throw nc::ShapeError("mmm_loss: " + std::to_string(labels.size()) + " labels for logits " + nc::shape_str(l.shape()));
  }
  for (std::size_t y : labels) {
    if (y >= l.cols()) {
      throw std::out_of_range("mmm_loss: label " + std::to_string(y) + " outside vocabulary of size " +
                              std::to_string(l.cols()));
    }
  }
  nc::Var ce = nc::sub(nc::logsumexp(logits), nc::pick(logits, labels));
  return nc::scale(nc::sum(ce), 1.0 / static_cast<double>(batch_size));
}

nc::Var total_loss(nc::Var contrastive, nc::Var mmm, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("total_loss: alpha must be non-negative");
  return nc::add(contrastive, nc::scale(mmm, alpha));
}

}  // namespace efuse::loss
