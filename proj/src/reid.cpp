#include "ovslink/reid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ovslink/rng.hpp"

namespace ovslink {
namespace {

template <typename T>
std::array<float, kEmbeddingDim> checked_values(std::span<const T> values) {
  if (values.size() != kEmbeddingDim) {
    throw std::invalid_argument("embedding needs " +
                                std::to_string(kEmbeddingDim) + " values, got " +
                                std::to_string(values.size()));
  }
  std::array<float, kEmbeddingDim> out{};
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
    out[i] = static_cast<float>(values[i]);
    if (!std::isfinite(out[i])) {
      throw std::invalid_argument("embedding has a non-finite entry");
    }
  }
  return out;
}

void check_batch_shape(const TripletBatch& batch) {
  if (static_cast<std::size_t>(batch.feats.rows()) != batch.labels.size()) {
    throw std::invalid_argument("triplet batch has " +
                                std::to_string(batch.feats.rows()) +
                                " rows but " +
                                std::to_string(batch.labels.size()) + " labels");
  }
}

constexpr std::size_t kMaxEvalSamples = 4096;

}  // namespace

Embedding::Embedding(std::span<const float> values)
    : values_(checked_values(values)) {}

Embedding::Embedding(std::span<const double> values)
    : values_(checked_values(values)) {}

double distance(const Embedding& a, const Embedding& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

Gallery::Gallery(InstanceId id, std::size_t capacity)
    : id_(id), capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("gallery capacity must be > 0");
  feats_.reserve(capacity);
}

void Gallery::add(const Embedding& e) {
  if (feats_.size() < capacity_) {
    feats_.push_back(e);
    return;
  }
  feats_[head_] = e;
  head_ = (head_ + 1) % capacity_;
}

const Embedding& Gallery::at(std::size_t i) const {
  if (i >= feats_.size()) throw std::out_of_range("gallery index out of range");
  return feats_[(head_ + i) % feats_.size()];
}

std::optional<double> gallery_match(const Gallery& g, const Embedding& q,
                                    double rho_reid, double quorum) {
  if (g.empty()) return std::nullopt;
  std::size_t within = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = distance(g.at(i), q);
    if (d < rho_reid) ++within;
    best = std::min(best, d);
  }
  // Division (not quorum * size) so that e.g. 3/10 compares equal to 0.30.
  const double fraction =
      static_cast<double>(within) / static_cast<double>(g.size());
  if (fraction >= quorum) return best;
  return std::nullopt;
}

TripletBatch TripletBatch::from_embeddings(std::span<const Embedding> embeddings,
                                           std::span<const InstanceId> labels) {
  TripletBatch batch;
  batch.feats.resize(static_cast<Eigen::Index>(embeddings.size()),
                     static_cast<Eigen::Index>(kEmbeddingDim));
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = 0; j < kEmbeddingDim; ++j) {
      batch.feats(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          embeddings[i][j];
    }
  }
  batch.labels.assign(labels.begin(), labels.end());
  check_batch_shape(batch);
  return batch;
}

std::vector<MinedTriplet> mine_batch_hard(const TripletBatch& batch) {
  check_batch_shape(batch);
  const auto n = static_cast<std::size_t>(batch.feats.rows());
  Eigen::MatrixXd sq(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    sq(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = (batch.feats.row(i) - batch.feats.row(j)).squaredNorm();
      sq(i, j) = d;
      sq(j, i) = d;
    }
  }
  std::vector<MinedTriplet> out;
  for (std::size_t a = 0; a < n; ++a) {
    std::optional<std::size_t> pos;
    std::optional<std::size_t> neg;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (batch.labels[j] == batch.labels[a]) {
        if (!pos || sq(a, j) > sq(a, *pos)) pos = j;
      } else {
        if (!neg || sq(a, j) < sq(a, *neg)) neg = j;
      }
    }
    if (pos && neg) {
      out.push_back({a, *pos, *neg, sq(a, *pos), sq(a, *neg)});
    }
  }
  if (out.empty()) {
    throw std::invalid_argument(
        "triplet batch has no anchor with both a positive and a negative");
  }
  return out;
}

double triplet_loss(const TripletBatch& batch, double alpha) {
  double loss = 0.0;
  for (const auto& t : mine_batch_hard(batch)) {
    loss += std::max(0.0, t.d_ap_sq - t.d_an_sq + alpha);
  }
  return loss;
}

Eigen::MatrixXd triplet_loss_grad(const TripletBatch& batch, double alpha) {
  const auto triplets = mine_batch_hard(batch);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(batch.feats.rows(),
                                               batch.feats.cols());
  for (const auto& t : triplets) {
    if (t.d_ap_sq - t.d_an_sq + alpha <= 0.0) continue;
    const auto xa = batch.feats.row(t.anchor);
    const auto xp = batch.feats.row(t.positive);
    const auto xn = batch.feats.row(t.negative);
    // d/dxa (|xa-xp|^2 - |xa-xn|^2) = 2(xn - xp)
    grad.row(t.anchor) += 2.0 * (xn - xp);
    grad.row(t.positive) -= 2.0 * (xa - xp);
    grad.row(t.negative) += 2.0 * (xa - xn);
  }
  return grad;
}

Eigen::MatrixXd init_projection(std::size_t in_dim, std::size_t out_dim,
                                std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) {
    throw std::invalid_argument("projection dimensions must be positive");
  }
  Rng rng = Rng(seed).split("init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  Eigen::MatrixXd w(out_dim, in_dim);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      w(r, c) = rng.uniform(-bound, bound);
    }
  }
  return w;
}

TrainResult train_projection(const Eigen::MatrixXd& samples,
                             std::span<const InstanceId> labels,
                             const TrainOptions& options) {
  const auto n = static_cast<std::size_t>(samples.rows());
  if (labels.size() != n) {
    throw std::invalid_argument("sample and label counts differ");
  }
  std::map<InstanceId, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[labels[i]].push_back(i);
  std::vector<InstanceId> repeated;
  for (const auto& [label, idx] : by_label) {
    if (idx.size() >= 2) repeated.push_back(label);
  }
  if (by_label.size() < 2 || repeated.empty()) {
    throw std::invalid_argument(
        "training needs at least two labels and one label with two samples");
  }
  if (options.batch_size < 3) {
    throw std::invalid_argument("batch size must be at least 3");
  }

  TrainResult result;
  result.projection = init_projection(static_cast<std::size_t>(samples.cols()),
                                      options.out_dim, options.seed);
  Eigen::MatrixXd& w = result.projection;

  auto project = [&](const Eigen::MatrixXd& x,
                     std::span<const InstanceId> lbl) {
    TripletBatch b;
    b.feats = x * w.transpose();
    b.labels.assign(lbl.begin(), lbl.end());
    return b;
  };

  // Fixed evaluation set for the before/after loss.
  std::vector<std::size_t> eval_idx(n);
  std::iota(eval_idx.begin(), eval_idx.end(), 0);
  if (n > kMaxEvalSamples) {
    Rng eval_rng = Rng(options.seed).split("eval");
    std::shuffle(eval_idx.begin(), eval_idx.end(), eval_rng.engine());
    eval_idx.resize(kMaxEvalSamples);
    std::sort(eval_idx.begin(), eval_idx.end());
  }
  Eigen::MatrixXd eval_x(eval_idx.size(), samples.cols());
  std::vector<InstanceId> eval_labels;
  for (std::size_t i = 0; i < eval_idx.size(); ++i) {
    eval_x.row(static_cast<Eigen::Index>(i)) =
        samples.row(static_cast<Eigen::Index>(eval_idx[i]));
    eval_labels.push_back(labels[eval_idx[i]]);
  }
  auto eval_loss = [&]() {
    try {
      return triplet_loss(project(eval_x, eval_labels), options.alpha);
    } catch (const std::invalid_argument&) {
      return 0.0;
    }
  };
  result.initial_loss = eval_loss();

  Rng rng = Rng(options.seed).split("batches");
  const std::size_t bs = std::min(options.batch_size, n);
  std::vector<std::size_t> pool(n);
  std::vector<std::size_t> chosen;
  std::vector<InstanceId> batch_labels;
  Eigen::MatrixXd batch_x(bs, samples.cols());
  result.loss_history.reserve(options.steps);

  for (std::size_t step = 0; step < options.steps; ++step) {
    // Seed every batch with two samples of one label and one of another so a
    // valid anchor always exists, then fill uniformly without replacement.
    chosen.clear();
    const InstanceId anchor_label = repeated[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(repeated.size()) - 1))];
    const auto& same = by_label.at(anchor_label);
    const auto a = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(same.size()) - 1));
    auto b = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(same.size()) - 2));
    if (b >= a) ++b;
    chosen.push_back(same[a]);
    chosen.push_back(same[b]);
    std::size_t neg = 0;
    do {
      neg = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    } while (labels[neg] == anchor_label);
    chosen.push_back(neg);

    pool.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (i != chosen[0] && i != chosen[1] && i != chosen[2]) pool.push_back(i);
    }
    for (std::size_t k = 0; chosen.size() < bs; ++k) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(k), static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[k], pool[j]);
      chosen.push_back(pool[k]);
    }

    batch_labels.clear();
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      batch_x.row(static_cast<Eigen::Index>(i)) =
          samples.row(static_cast<Eigen::Index>(chosen[i]));
      batch_labels.push_back(labels[chosen[i]]);
    }
    const TripletBatch batch = project(batch_x, batch_labels);
    result.loss_history.push_back(triplet_loss(batch, options.alpha));
    const Eigen::MatrixXd g = triplet_loss_grad(batch, options.alpha);
    w -= options.learn_rate * (g.transpose() * batch_x);
  }

  result.final_loss = eval_loss();
  return result;
}

}  // namespace ovslink
