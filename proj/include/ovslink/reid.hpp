#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ovslink {

using InstanceId = std::int64_t;

inline constexpr std::size_t kEmbeddingDim = 128;

class Embedding {
 public:
  Embedding() { values_.fill(0.0f); }
  // Throws std::invalid_argument unless exactly kEmbeddingDim finite values.
  explicit Embedding(std::span<const float> values);
  explicit Embedding(std::span<const double> values);

  float operator[](std::size_t i) const { return values_[i]; }
  std::span<const float, kEmbeddingDim> values() const { return values_; }
  bool operator==(const Embedding&) const = default;

 private:
  std::array<float, kEmbeddingDim> values_;
};

double distance(const Embedding& a, const Embedding& b);

inline constexpr std::size_t kDefaultGalleryCapacity = 64;
inline constexpr double kDefaultRhoReid = 2.3;
inline constexpr double kDefaultQuorum = 0.30;

// Bounded per-instance collection of embeddings. Once full, each add evicts
// the oldest entry. Storage is reserved up front and never grows.
class Gallery {
 public:
  explicit Gallery(InstanceId id, std::size_t capacity = kDefaultGalleryCapacity);

  InstanceId instance_id() const { return id_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return feats_.size(); }
  bool empty() const { return feats_.empty(); }

  void add(const Embedding& e);
  // i = 0 is the oldest entry.
  const Embedding& at(std::size_t i) const;

 private:
  InstanceId id_;
  std::size_t capacity_;
  std::vector<Embedding> feats_;
  std::size_t head_ = 0;  // index of the oldest entry once full
};

// Minimum distance from q to the gallery, provided at least `quorum` of the
// gallery lies strictly closer than rho_reid. Empty gallery never matches.
std::optional<double> gallery_match(const Gallery& g, const Embedding& q,
                                    double rho_reid = kDefaultRhoReid,
                                    double quorum = kDefaultQuorum);

// --- batch-hard triplet loss -------------------------------------------------

inline constexpr double kDefaultMargin = 1.0;

// One feature row per sample. Rows may have any dimension; the trainer feeds
// projected features here in double precision.
struct TripletBatch {
  Eigen::MatrixXd feats;
  std::vector<InstanceId> labels;

  static TripletBatch from_embeddings(std::span<const Embedding> embeddings,
                                      std::span<const InstanceId> labels);
};

// Hardest positive (farthest same label) and hardest negative (nearest other
// label) for one anchor; ties go to the lowest index.
struct MinedTriplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
  double d_ap_sq;
  double d_an_sq;
};

// Throws std::invalid_argument when no sample has both a positive and a
// negative.
std::vector<MinedTriplet> mine_batch_hard(const TripletBatch& batch);

// Sum over anchors of max(0, d_ap^2 - d_an^2 + alpha).
double triplet_loss(const TripletBatch& batch, double alpha = kDefaultMargin);

// d loss / d feats with the mined selections held fixed. Anchors whose hinge
// is not strictly positive contribute nothing.
Eigen::MatrixXd triplet_loss_grad(const TripletBatch& batch,
                                  double alpha = kDefaultMargin);

struct TrainOptions {
  std::size_t out_dim = kEmbeddingDim;
  std::size_t steps = 200;
  double learn_rate = 1e-3;
  std::size_t batch_size = 32;
  double alpha = kDefaultMargin;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Eigen::MatrixXd projection;  // out_dim x in_dim
  std::vector<double> loss_history;  // minibatch loss before each step
  double initial_loss = 0.0;  // full-set loss before training
  double final_loss = 0.0;  // full-set loss after training
};

// Entries uniform in [-1/sqrt(in), 1/sqrt(in)], deterministic in seed.
Eigen::MatrixXd init_projection(std::size_t in_dim, std::size_t out_dim,
                                std::uint64_t seed);

// Mini-batch gradient descent on the triplet loss of samples * W^T.
// `samples` holds one raw feature row per sample.
TrainResult train_projection(const Eigen::MatrixXd& samples,
                             std::span<const InstanceId> labels,
                             const TrainOptions& options);

}  // namespace ovslink
