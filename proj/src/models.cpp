#include "relbot/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "relbot/digest.hpp"
#include "relbot/errors.hpp"
#include "relbot/rng.hpp"

namespace relbot::models {
namespace {

constexpr std::string_view kMagic = "RBCKPT01";

std::vector<std::size_t> encoder_dims(const EncoderSpec& e) {
  std::vector<std::size_t> dims{e.input_dim};
  dims.insert(dims.end(), e.hidden_dims.begin(), e.hidden_dims.end());
  dims.push_back(e.embedding_dim);
  return dims;
}

std::vector<std::size_t> head_dims(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::kRelational:
      return {};
    case ModelKind::kFeedforward: {
      std::vector<std::size_t> dims{2 * spec.encoder.embedding_dim};
      dims.insert(dims.end(), spec.head_hidden_dims.begin(), spec.head_hidden_dims.end());
      dims.push_back(1);
      return dims;
    }
    case ModelKind::kContrastive: {
      std::vector<std::size_t> dims{spec.encoder.embedding_dim};
      dims.insert(dims.end(), spec.head_hidden_dims.begin(), spec.head_hidden_dims.end());
      dims.push_back(spec.projection_dim);
      return dims;
    }
  }
  return {};
}

std::vector<DenseLayer> glorot_layers(const std::vector<std::size_t>& dims, Rng& rng) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{Tensor({fan_in, fan_out}), Tensor({1, fan_out})};
    for (double& w : layer.weight.data()) w = rng.uniform(-limit, limit);
    layers.push_back(std::move(layer));
  }
  return layers;
}

// Applies layers [first, last) of the bound parameters; ReLU between layers.
ad::Var mlp(const BoundModel& model, std::size_t first, std::size_t last, ad::Var x) {
  for (std::size_t l = first; l < last; ++l) {
    x = ad::add(ad::matmul(x, model.params[2 * l]), model.params[2 * l + 1]);
    if (l + 1 < last) x = ad::relu(x);
  }
  return x;
}

std::size_t encoder_layer_count(const BoundModel& model) { return model.state->encoder.size(); }

std::size_t head_layer_count(const BoundModel& model) { return model.state->head.size(); }

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint64_t get_u64(std::string_view bytes, std::size_t& pos) {
  if (pos + 8 > bytes.size()) throw IoError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

Json dims_json(const std::vector<std::size_t>& v) {
  Json a = Json::array();
  for (std::size_t x : v) a.push_back(x);
  return a;
}

}  // namespace

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kRelational: return "relational";
    case ModelKind::kFeedforward: return "feedforward";
    case ModelKind::kContrastive: return "contrastive";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "relational") return ModelKind::kRelational;
  if (name == "feedforward") return ModelKind::kFeedforward;
  if (name == "contrastive") return ModelKind::kContrastive;
  throw ValidationError("unknown model kind '" + std::string(name) + "'");
}

std::string_view metric_name(SimilarityMetric metric) {
  return metric == SimilarityMetric::kEuclidean ? "euclidean" : "cosine";
}

SimilarityMetric parse_metric(std::string_view name) {
  if (name == "euclidean") return SimilarityMetric::kEuclidean;
  if (name == "cosine") return SimilarityMetric::kCosine;
  throw ValidationError("unknown similarity metric '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (encoder.input_dim < 1) throw ValidationError("encoder input_dim must be >= 1");
  for (std::size_t h : encoder.hidden_dims)
    if (h < 1) throw ValidationError("encoder hidden dims must be >= 1");
  if (encoder.embedding_dim < 2) throw ValidationError("embedding_dim must be >= 2");
  for (std::size_t h : head_hidden_dims)
    if (h < 1) throw ValidationError("head hidden dims must be >= 1");
  if (kind == ModelKind::kContrastive && projection_dim < 1)
    throw ValidationError("projection_dim must be >= 1");
}

Json ModelSpec::to_json() const {
  Json j;
  j["kind"] = std::string(model_kind_name(kind));
  j["input_dim"] = encoder.input_dim;
  j["hidden_dims"] = dims_json(encoder.hidden_dims);
  j["embedding_dim"] = encoder.embedding_dim;
  j["head_hidden_dims"] = dims_json(head_hidden_dims);
  j["projection_dim"] = projection_dim;
  j["metric"] = std::string(metric_name(metric));
  j["activation"] = "relu";
  return j;
}

ModelSpec ModelSpec::from_json(const Json& j) {
  ModelSpec spec;
  spec.kind = parse_model_kind(j.at("kind").get<std::string>());
  spec.encoder.input_dim = j.at("input_dim").get<std::size_t>();
  spec.encoder.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  spec.encoder.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  spec.head_hidden_dims = j.at("head_hidden_dims").get<std::vector<std::size_t>>();
  spec.projection_dim = j.at("projection_dim").get<std::size_t>();
  spec.metric = parse_metric(j.at("metric").get<std::string>());
  spec.validate();
  return spec;
}

std::vector<const Tensor*> ModelState::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto* group : {&encoder, &head})
    for (const DenseLayer& l : *group) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  return out;
}

std::vector<Tensor*> ModelState::parameters() {
  std::vector<Tensor*> out;
  for (auto* group : {&encoder, &head})
    for (DenseLayer& l : *group) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

ModelState init_parameters(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ModelState state;
  state.spec = spec;
  state.encoder = glorot_layers(encoder_dims(spec.encoder), rng);
  state.head = glorot_layers(head_dims(spec), rng);
  return state;
}

BoundModel bind(ad::Graph& graph, const ModelState& state, bool requires_grad) {
  BoundModel model;
  model.state = &state;
  for (const Tensor* p : state.parameters()) model.params.push_back(graph.leaf(*p, requires_grad));
  return model;
}

ad::Var encode(const BoundModel& model, ad::Var inputs) {
  const std::size_t expected = model.state->spec.encoder.input_dim;
  if (inputs.value().rank() != 2 || inputs.value().shape()[1] != expected)
    throw ShapeError("encode: expected inputs [batch, " + std::to_string(expected) + "], got " +
                     shape_string(inputs.value().shape()));
  return mlp(model, 0, encoder_layer_count(model), inputs);
}

ad::Var normalize_rows(ad::Var x) {
  ad::Graph& g = *x.graph;
  const ad::Var sq = ad::add(ad::sum(ad::square(x), 1), g.leaf(Tensor::scalar(1e-12)));
  const ad::Var inv_norm = ad::exp(ad::scale(ad::log(sq), -0.5));
  return ad::multiply(x, inv_norm);
}

ad::Var relational_similarity(ad::Var emb_a, ad::Var emb_b, SimilarityMetric metric) {
  if (emb_a.value().shape() != emb_b.value().shape())
    throw ShapeError("relational_similarity: embedding shapes differ: " + shape_string(emb_a.value().shape()) +
                     " vs " + shape_string(emb_b.value().shape()));
  if (metric == SimilarityMetric::kEuclidean) return ad::exp(ad::scale(ad::euclidean_distance(emb_a, emb_b), -1.0));
  const ad::Var cos = ad::sum(ad::multiply(normalize_rows(emb_a), normalize_rows(emb_b)), 1);
  ad::Graph& g = *emb_a.graph;
  return ad::scale(ad::add(cos, g.leaf(Tensor::scalar(1.0))), 0.5);
}

ad::Var feedforward_similarity(const BoundModel& model, ad::Var emb_a, ad::Var emb_b) {
  if (model.state->spec.kind != ModelKind::kFeedforward || head_layer_count(model) == 0)
    throw ShapeError("feedforward_similarity: model has no feedforward head");
  const std::size_t first = encoder_layer_count(model);
  return ad::sigmoid(mlp(model, first, first + head_layer_count(model), ad::concat(emb_a, emb_b)));
}

ad::Var project(const BoundModel& model, ad::Var embeddings) {
  if (model.state->spec.kind != ModelKind::kContrastive || head_layer_count(model) == 0)
    throw ShapeError("project: model has no projection head");
  const std::size_t first = encoder_layer_count(model);
  return mlp(model, first, first + head_layer_count(model), embeddings);
}

ad::Var embedding_similarity(const BoundModel& model, ad::Var emb_a, ad::Var emb_b) {
  switch (model.state->spec.kind) {
    case ModelKind::kRelational:
      return relational_similarity(emb_a, emb_b, model.state->spec.metric);
    case ModelKind::kFeedforward:
      return feedforward_similarity(model, emb_a, emb_b);
    case ModelKind::kContrastive:
      return relational_similarity(emb_a, emb_b, SimilarityMetric::kCosine);
  }
  throw ShapeError("embedding_similarity: unknown model kind");
}

ad::Var pair_similarity(const BoundModel& model, ad::Var inputs_a, ad::Var inputs_b) {
  return embedding_similarity(model, encode(model, inputs_a), encode(model, inputs_b));
}

ad::Var contrastive_loss(ad::Var views, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("contrastive_loss: temperature must be positive");
  const Tensor& v = views.value();
  if (v.rank() != 2 || v.shape()[0] % 2 != 0) throw ShapeError("contrastive_loss: views must be [2N, d]");
  const std::size_t two_n = v.shape()[0], n = two_n / 2;
  if (n < 2) throw ValidationError("contrastive_loss: need N >= 2 positive pairs for negatives");
  ad::Graph& g = *views.graph;
  Tensor self_mask({two_n, two_n});
  Tensor partner({two_n, two_n});
  for (std::size_t i = 0; i < two_n; ++i) {
    self_mask.at(i, i) = -1e9;
    partner.at(i, (i + n) % two_n) = 1.0;
  }
  const ad::Var z = normalize_rows(views);
  const ad::Var logits = ad::add(ad::scale(ad::matmul(z, z, true), 1.0 / temperature), g.leaf(std::move(self_mask)));
  const ad::Var probs = ad::softmax_row(logits);
  const ad::Var picked = ad::sum(ad::multiply(probs, g.leaf(std::move(partner))), 1);
  return ad::scale(ad::mean(ad::log(picked)), -1.0);
}

Tensor encode(const ModelState& state, const Tensor& inputs) {
  ad::Graph graph;
  const BoundModel model = bind(graph, state, false);
  return encode(model, graph.leaf(inputs)).value();
}

Tensor similarity_from_embeddings(const ModelState& state, const Tensor& emb_a, const Tensor& emb_b) {
  ad::Graph graph;
  const BoundModel model = bind(graph, state, false);
  return embedding_similarity(model, graph.leaf(emb_a), graph.leaf(emb_b)).value();
}

// --- Optimization -------------------------------------------------------------

OptimizerState make_optimizer(const ModelState& state, const AdamOptions& options) {
  if (!(options.learning_rate > 0.0) || !(options.beta1 >= 0.0 && options.beta1 < 1.0) ||
      !(options.beta2 >= 0.0 && options.beta2 < 1.0) || !(options.epsilon > 0.0))
    throw ValidationError("invalid Adam hyperparameters");
  OptimizerState opt;
  opt.options = options;
  for (const Tensor* p : state.parameters()) {
    opt.first_moment.emplace_back(p->shape());
    opt.second_moment.emplace_back(p->shape());
  }
  return opt;
}

std::vector<Tensor> collect_gradients(const ad::GradientMap& grads, const BoundModel& model) {
  std::vector<Tensor> out;
  out.reserve(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (!grads.contains(model.params[i]))
      throw ShapeError("missing gradient for parameter " + std::to_string(i));
    out.push_back(grads.at(model.params[i]));
  }
  return out;
}

void optimizer_step(OptimizerState& opt, ModelState& state, std::span<const Tensor> grads) {
  const std::vector<Tensor*> params = state.parameters();
  if (grads.size() != params.size() || opt.first_moment.size() != params.size())
    throw ShapeError("optimizer_step: expected " + std::to_string(params.size()) + " gradients, got " +
                     std::to_string(grads.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].shape() != params[i]->shape())
      throw ShapeError("optimizer_step: gradient " + std::to_string(i) + " has shape " +
                       shape_string(grads[i].shape()) + ", parameter has " + shape_string(params[i]->shape()));
  const AdamOptions& o = opt.options;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = opt.first_moment[i];
    Tensor& v = opt.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
  state.step_count += 1;
}

void optimizer_step(OptimizerState& opt, ModelState& state, const ad::GradientMap& grads,
                    const BoundModel& model) {
  const std::vector<Tensor> g = collect_gradients(grads, model);
  optimizer_step(opt, state, g);
}

// --- Checkpoints --------------------------------------------------------------

std::string checkpoint_bytes(const ModelState& state) {
  Json header;
  header["spec"] = state.spec.to_json();
  header["step_count"] = state.step_count;
  Json shapes = Json::array();
  for (const Tensor* p : state.parameters()) shapes.push_back(dims_json(p->shape()));
  header["shapes"] = shapes;
  const std::string header_text = canonical_dump(header);

  std::string payload;
  payload.reserve(state.parameter_count() * 8);
  for (const Tensor* p : state.parameters())
    for (double v : p->data()) put_u64(payload, std::bit_cast<std::uint64_t>(v));

  std::string out(kMagic);
  put_u64(out, header_text.size());
  out += header_text;
  put_u64(out, payload.size());
  out += payload;
  const auto digest = sha256(payload);
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return out;
}

ModelState parse_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw IoError("not a checkpoint (bad magic)");
  std::size_t pos = kMagic.size();
  const std::uint64_t header_len = get_u64(bytes, pos);
  if (pos + header_len > bytes.size()) throw IoError("checkpoint truncated in header");
  Json header;
  try {
    header = Json::parse(bytes.substr(pos, header_len));
  } catch (const Json::exception& e) {
    throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;
  const std::uint64_t payload_len = get_u64(bytes, pos);
  if (pos + payload_len + 32 != bytes.size()) throw IoError("checkpoint payload length mismatch");
  const std::string_view payload = bytes.substr(pos, payload_len);
  const auto digest = sha256(payload);
  if (std::memcmp(digest.data(), bytes.data() + pos + payload_len, 32) != 0)
    throw IoError("checkpoint checksum mismatch");

  ModelState state = init_parameters(ModelSpec::from_json(header.at("spec")), 0);
  state.step_count = header.at("step_count").get<std::uint64_t>();
  const std::vector<Tensor*> params = state.parameters();
  const Json& shapes = header.at("shapes");
  if (shapes.size() != params.size()) throw IoError("checkpoint parameter count mismatch");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (shapes[i].get<std::vector<std::size_t>>() != params[i]->shape())
      throw IoError("checkpoint parameter shape mismatch at " + std::to_string(i));
    for (double& v : params[i]->data()) {
      v = std::bit_cast<double>(get_u64(payload, offset));
    }
  }
  if (offset != payload.size()) throw IoError("checkpoint payload has trailing bytes");
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  write_file(path, checkpoint_bytes(state));
}

ModelState load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace relbot::models
