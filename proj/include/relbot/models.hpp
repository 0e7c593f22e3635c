#pragma once
// Relational, feedforward and contrastive similarity models over a shared MLP
// encoder, plus parameter initialization, Adam and checkpoint persistence.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relbot/autodiff.hpp"
#include "relbot/canonical_json.hpp"
#include "relbot/tensor.hpp"

namespace relbot::models {

enum class ModelKind { kRelational, kFeedforward, kContrastive };

/// How the relational bottleneck turns two embeddings into a similarity.
/// Euclidean: exp(-||a - b||). Cosine: (1 + cos(a, b)) / 2.
enum class SimilarityMetric { kEuclidean, kCosine };

std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
std::string_view metric_name(SimilarityMetric metric);
SimilarityMetric parse_metric(std::string_view name);

/// ReLU MLP; the final layer is linear and yields the embedding.
struct EncoderSpec {
  std::size_t input_dim = 1024;
  std::vector<std::size_t> hidden_dims{256, 64};
  std::size_t embedding_dim = 32;
};

struct ModelSpec {
  ModelKind kind = ModelKind::kRelational;
  EncoderSpec encoder;
  // Feedforward: [emb_a, emb_b] -> hidden... -> 1 (sigmoid).
  // Contrastive: emb -> hidden... -> projection_dim.
  std::vector<std::size_t> head_hidden_dims{64};
  std::size_t projection_dim = 32;
  SimilarityMetric metric = SimilarityMetric::kEuclidean;

  void validate() const;
  Json to_json() const;
  static ModelSpec from_json(const Json& j);
};

struct DenseLayer {
  Tensor weight;  // [fan_in, fan_out]
  Tensor bias;    // [1, fan_out]
};

struct ModelState {
  ModelSpec spec;
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> head;  // empty for the relational model
  std::uint64_t step_count = 0;

  /// Parameters in declaration order: encoder layers, then head layers; weight before bias.
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor*> parameters();
  std::size_t parameter_count() const;
};

/// Glorot-uniform weights from a seeded stream, zero biases.
ModelState init_parameters(const ModelSpec& spec, std::uint64_t seed);

/// Model parameters registered as leaves of one graph. Both pathways of a pair
/// read these same nodes, so weight sharing is structural.
struct BoundModel {
  const ModelState* state = nullptr;
  std::vector<ad::Var> params;  // declaration order
};

BoundModel bind(ad::Graph& graph, const ModelState& state, bool requires_grad = true);

ad::Var encode(const BoundModel& model, ad::Var inputs);

/// Parameter-free bottleneck; [m, d] x [m, d] -> [m, 1].
ad::Var relational_similarity(ad::Var emb_a, ad::Var emb_b,
                              SimilarityMetric metric = SimilarityMetric::kEuclidean);

/// Head MLP over concatenated embeddings; [m, 1] in (0, 1).
ad::Var feedforward_similarity(const BoundModel& model, ad::Var emb_a, ad::Var emb_b);

/// Contrastive projection head.
ad::Var project(const BoundModel& model, ad::Var embeddings);

/// Similarity of embedded pairs for the model's kind (relational bottleneck,
/// feedforward head, or cosine for contrastive models).
ad::Var embedding_similarity(const BoundModel& model, ad::Var emb_a, ad::Var emb_b);

/// Predicted similarity for paired inputs, dispatching on the model kind
/// (contrastive models compare cosine similarity of embeddings, mapped to [0, 1]).
ad::Var pair_similarity(const BoundModel& model, ad::Var inputs_a, ad::Var inputs_b);

/// NT-Xent over [2N, d] views where rows i and i + N are partners: cosine
/// similarities scaled by 1/temperature, self-pairs excluded, averaged over all 2N anchors.
ad::Var contrastive_loss(ad::Var views, double temperature);

/// Row-wise L2 normalization (guards zero rows with a 1e-12 floor on the squared norm).
ad::Var normalize_rows(ad::Var x);

// Forward-only conveniences (no gradients recorded).
Tensor encode(const ModelState& state, const Tensor& inputs);
Tensor similarity_from_embeddings(const ModelState& state, const Tensor& emb_a, const Tensor& emb_b);

// --- Optimization -------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer(const ModelState& state, const AdamOptions& options = {});

/// Gradients for every bound parameter, in declaration order; ShapeError if any is missing.
std::vector<Tensor> collect_gradients(const ad::GradientMap& grads, const BoundModel& model);

/// Bias-corrected Adam update; increments both step counters.
void optimizer_step(OptimizerState& optimizer, ModelState& state, std::span<const Tensor> grads);
void optimizer_step(OptimizerState& optimizer, ModelState& state, const ad::GradientMap& grads,
                    const BoundModel& model);

// --- Checkpoints --------------------------------------------------------------
//
// Layout (all integers little-endian):
//   "RBCKPT01"                      8 bytes
//   header length                   u64
//   header                          canonical JSON {"spec", "shapes", "step_count"}
//   payload length                  u64
//   payload                         float64 parameters in declaration order
//   SHA-256 of payload              32 bytes

std::string checkpoint_bytes(const ModelState& state);
ModelState parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace relbot::models
