#pragma once

// Generator / discriminator networks and the binary checkpoint format.
//
// Generator:      noise[100] -> dense 100->64*25*25 -> leaky
//                 -> deconv 64->32 (x2) -> leaky -> deconv 32->1 (x2) -> sigmoid
//                 => [1,100,100] in (0,1)
// Discriminator:  [1,100,100] -> conv 1->16 s2 -> leaky -> conv 16->32 s2 -> leaky
//                 -> conv 32->64 s2 -> leaky -> flatten -> dropout -> dense 10816->1
//                 -> sigmoid

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sclld/autodiff.hpp"
#include "sclld/tensor.hpp"

namespace sclld {

inline constexpr std::size_t kNoiseLength = 100;
inline constexpr double kInitStddev = 0.02;

struct LayerSettings {
  double leaky_slope = 0.01;
  double dropout_rate = 0.5;
};

enum class ModelRole : std::uint8_t { Generator = 0, Discriminator = 1, Cnn = 2 };
enum class TrainingPhase : std::uint8_t { Phase1 = 1, Phase2 = 2 };

std::string_view to_string(ModelRole role);
std::string_view to_string(TrainingPhase phase);

// Ordered named tensors with a role and phase tag.
struct ModelCheckpoint {
  ModelRole role = ModelRole::Discriminator;
  TrainingPhase phase = TrainingPhase::Phase1;
  std::vector<Parameter> params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "SCLD", u32 version, u8 role, u8 phase,
// u32 record count, then per record: u32 name length, name bytes,
// u32 rank, u64 extents, f64 payload.
std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

class Generator {
 public:
  explicit Generator(Rng& rng, LayerSettings settings = {});
  explicit Generator(const ModelCheckpoint& ckpt, LayerSettings settings = {});

  // noise: [B,100] -> images [B,1,100,100].
  Var forward(Tape& tape, const Var& noise);

  std::vector<Parameter*> parameters();
  ModelCheckpoint checkpoint() const;

 private:
  LayerSettings settings_;
  std::vector<Parameter> params_;
};

struct DiscriminatorOutputs {
  Var features;     // last conv layer after activation, [B,64,13,13]
  Var logit;        // [B,1]
  Var probability;  // [B,1]
};

class Discriminator {
 public:
  explicit Discriminator(Rng& rng, LayerSettings settings = {},
                         ModelRole role = ModelRole::Discriminator);
  explicit Discriminator(const ModelCheckpoint& ckpt, LayerSettings settings = {});

  // images: [B,1,100,100]. With `frozen`, parameters enter the tape as
  // constants and receive no gradient.
  DiscriminatorOutputs forward(Tape& tape, const Var& images, Mode mode, Rng& rng,
                               bool frozen = false);

  std::vector<Parameter*> parameters();
  const std::vector<Parameter>& named_parameters() const { return params_; }
  std::vector<Parameter>& named_parameters() { return params_; }
  ModelCheckpoint checkpoint() const;

  ModelRole role() const { return role_; }
  TrainingPhase phase() const { return phase_; }
  void set_phase(TrainingPhase phase) { phase_ = phase; }
  const LayerSettings& settings() const { return settings_; }

 private:
  LayerSettings settings_;
  ModelRole role_ = ModelRole::Discriminator;
  TrainingPhase phase_ = TrainingPhase::Phase1;
  std::vector<Parameter> params_;
};

// Stacks [1,H,W] images into one [B,1,H,W] batch.
Tensor stack_images(const std::vector<const Tensor*>& images);

}  // namespace sclld
