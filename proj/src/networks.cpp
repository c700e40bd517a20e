#include "sclld/networks.hpp"

#include <algorithm>

#include "binary_io.hpp"
#include "sclld/error.hpp"

namespace sclld {

namespace fs = std::filesystem;

std::string_view to_string(ModelRole role) {
  switch (role) {
    case ModelRole::Generator: return "generator";
    case ModelRole::Discriminator: return "discriminator";
    case ModelRole::Cnn: return "cnn";
  }
  return "unknown";
}

std::string_view to_string(TrainingPhase phase) {
  return phase == TrainingPhase::Phase1 ? "phase1" : "phase2";
}

// ---------------------------------------------------------------------------
// Checkpoint codec

using detail::put;
using detail::Reader;

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  std::string out = "SCLD";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(ckpt.role));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(ckpt.phase));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.dims()) put<std::uint64_t>(out, d);
    for (double v : p.value.data()) put<double>(out, v);
  }
  return out;
}

ModelCheckpoint deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes, "checkpoint");
  if (in.take(4) != "SCLD") fail(ErrorKind::Format, "not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  }
  ModelCheckpoint ckpt;
  const auto role = in.get<std::uint8_t>();
  const auto phase = in.get<std::uint8_t>();
  if (role > 2) fail(ErrorKind::Format, "unknown checkpoint role tag");
  if (phase != 1 && phase != 2) fail(ErrorKind::Format, "unknown checkpoint phase tag");
  ckpt.role = static_cast<ModelRole>(role);
  ckpt.phase = static_cast<TrainingPhase>(phase);
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint32_t>();
    if (rank == 0 || rank > 8) fail(ErrorKind::Format, "bad rank for " + name);
    Shape dims;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = in.get<std::uint64_t>();
      if (d == 0 || d > (1ull << 32)) fail(ErrorKind::Format, "bad extent for " + name);
      dims.push_back(static_cast<std::size_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    if (n > bytes.size() / sizeof(double)) fail(ErrorKind::Format, "payload too large for " + name);
    std::vector<double> data(n);
    for (auto& v : data) v = in.get<double>();
    ckpt.params.emplace_back(std::move(name), Tensor(std::move(dims), std::move(data)));
  }
  if (!in.done()) fail(ErrorKind::Format, "trailing bytes after checkpoint records");
  return ckpt;
}

void save_checkpoint(const fs::path& path, const ModelCheckpoint& ckpt) {
  detail::write_bytes(path, serialize_checkpoint(ckpt));
}

ModelCheckpoint load_checkpoint(const fs::path& path) {
  return deserialize_checkpoint(detail::read_bytes(path));
}

// ---------------------------------------------------------------------------
// Networks

namespace {

struct ParamSpec {
  const char* name;
  Shape dims;
  bool is_bias;
};

const std::vector<ParamSpec>& generator_layout() {
  static const std::vector<ParamSpec> layout{
      {"dense.weight", {64 * 25 * 25, kNoiseLength}, false},
      {"dense.bias", {64 * 25 * 25}, true},
      {"deconv1.weight", {64, 32, 3, 3}, false},
      {"deconv1.bias", {32}, true},
      {"deconv2.weight", {32, 1, 3, 3}, false},
      {"deconv2.bias", {1}, true},
  };
  return layout;
}

const std::vector<ParamSpec>& discriminator_layout() {
  static const std::vector<ParamSpec> layout{
      {"conv1.weight", {16, 1, 3, 3}, false},  {"conv1.bias", {16}, true},
      {"conv2.weight", {32, 16, 3, 3}, false}, {"conv2.bias", {32}, true},
      {"conv3.weight", {64, 32, 3, 3}, false}, {"conv3.bias", {64}, true},
      {"dense.weight", {1, 64 * 13 * 13}, false}, {"dense.bias", {1}, true},
  };
  return layout;
}

std::vector<Parameter> init_params(const std::vector<ParamSpec>& layout, Rng& rng) {
  std::vector<Parameter> params;
  for (const auto& spec : layout) {
    params.emplace_back(spec.name, spec.is_bias ? Tensor(spec.dims)
                                                : Tensor::randn(spec.dims, kInitStddev, rng));
  }
  return params;
}

std::vector<Parameter> params_from(const ModelCheckpoint& ckpt,
                                   const std::vector<ParamSpec>& layout) {
  if (ckpt.params.size() != layout.size()) {
    fail(ErrorKind::Format, "checkpoint has " + std::to_string(ckpt.params.size()) +
                                " tensors, network expects " + std::to_string(layout.size()));
  }
  std::vector<Parameter> params;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& p = ckpt.params[i];
    if (p.name != layout[i].name || p.value.dims() != layout[i].dims) {
      fail(ErrorKind::Format, "checkpoint tensor " + p.name + " [" + shape_to_string(p.value.dims()) +
                                  "] does not match expected " + layout[i].name + " [" +
                                  shape_to_string(layout[i].dims) + "]");
    }
    params.emplace_back(p.name, p.value);
  }
  return params;
}

std::vector<Parameter*> pointers(std::vector<Parameter>& params) {
  std::vector<Parameter*> out;
  for (auto& p : params) out.push_back(&p);
  return out;
}

}  // namespace

Generator::Generator(Rng& rng, LayerSettings settings)
    : settings_(settings), params_(init_params(generator_layout(), rng)) {}

Generator::Generator(const ModelCheckpoint& ckpt, LayerSettings settings)
    : settings_(settings), params_(params_from(ckpt, generator_layout())) {
  if (ckpt.role != ModelRole::Generator) fail(ErrorKind::Format, "checkpoint is not a generator");
}

Var Generator::forward(Tape& tape, const Var& noise) {
  const auto& d = noise.dims();
  if (d.size() != 2 || d[1] != kNoiseLength) {
    fail(ErrorKind::ShapeMismatch, "generator expects noise [B,100], got " + shape_to_string(d));
  }
  const std::size_t batch = d[0];
  Var h = ad::dense(noise, tape.parameter(params_[0]), tape.parameter(params_[1]));
  h = ad::leaky_relu(ad::reshape(h, {batch, 64, 25, 25}), settings_.leaky_slope);
  h = ad::conv2d_transpose(h, tape.parameter(params_[2]), tape.parameter(params_[3]), 2);
  h = ad::leaky_relu(h, settings_.leaky_slope);
  h = ad::conv2d_transpose(h, tape.parameter(params_[4]), tape.parameter(params_[5]), 2);
  return ad::sigmoid(h);
}

std::vector<Parameter*> Generator::parameters() { return pointers(params_); }

ModelCheckpoint Generator::checkpoint() const {
  return {ModelRole::Generator, TrainingPhase::Phase1, params_};
}

Discriminator::Discriminator(Rng& rng, LayerSettings settings, ModelRole role)
    : settings_(settings), role_(role), params_(init_params(discriminator_layout(), rng)) {
  if (role == ModelRole::Generator) fail(ErrorKind::InvalidArgument, "discriminator role cannot be generator");
}

Discriminator::Discriminator(const ModelCheckpoint& ckpt, LayerSettings settings)
    : settings_(settings), role_(ckpt.role), phase_(ckpt.phase),
      params_(params_from(ckpt, discriminator_layout())) {
  if (ckpt.role == ModelRole::Generator) {
    fail(ErrorKind::Format, "generator checkpoint supplied where a classifier was expected");
  }
}

DiscriminatorOutputs Discriminator::forward(Tape& tape, const Var& images, Mode mode, Rng& rng,
                                            bool frozen) {
  const auto& d = images.dims();
  if (d.size() != 4 || d[1] != 1 || d[2] != 100 || d[3] != 100) {
    fail(ErrorKind::ShapeMismatch,
         "discriminator expects [B,1,100,100], got " + shape_to_string(d));
  }
  auto bind = [&](std::size_t i) {
    return frozen ? tape.constant_ref(params_[i].value) : tape.parameter(params_[i]);
  };
  const double a = settings_.leaky_slope;
  Var h = ad::leaky_relu(ad::conv2d(images, bind(0), bind(1), 2), a);
  h = ad::leaky_relu(ad::conv2d(h, bind(2), bind(3), 2), a);
  Var features = ad::leaky_relu(ad::conv2d(h, bind(4), bind(5), 2), a);
  Var flat = ad::reshape(features, {d[0], 64 * 13 * 13});
  flat = ad::dropout(flat, settings_.dropout_rate, mode, rng);
  Var logit = ad::dense(flat, bind(6), bind(7));
  return {features, logit, ad::sigmoid(logit)};
}

std::vector<Parameter*> Discriminator::parameters() { return pointers(params_); }

ModelCheckpoint Discriminator::checkpoint() const { return {role_, phase_, params_}; }

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) fail(ErrorKind::InvalidArgument, "cannot stack an empty image list");
  const Shape& one = images.front()->dims();
  if (one.size() != 3) fail(ErrorKind::ShapeMismatch, "expected [C,H,W] images");
  Shape dims{images.size(), one[0], one[1], one[2]};
  std::vector<double> data;
  data.reserve(shape_size(dims));
  for (const auto* img : images) {
    if (img->dims() != one) fail(ErrorKind::ShapeMismatch, "images in a batch differ in shape");
    data.insert(data.end(), img->data().begin(), img->data().end());
  }
  return Tensor(std::move(dims), std::move(data));
}

}  // namespace sclld
