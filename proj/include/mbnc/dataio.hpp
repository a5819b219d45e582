#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbnc/matrix.hpp"
#include "mbnc/nn.hpp"

namespace mbnc {

struct Dataset {
  Matrix X;  // N x D
  std::vector<int> y;
  int class_count = 0;
  std::string name;

  std::size_t size() const { return X.rows; }
  void validate() const;
};

// k interleaved 2-D spirals, exactly n_per_class points each, class-major.
// Point i of class c sits at radius 0.1+0.9t, angle 3*pi*t + 2*pi*c/k with
// t = i/(n-1), plus N(0, noise_std^2) per coordinate.
Dataset gen_spirals(int n_per_class, int k_classes, double noise_std, std::uint64_t seed);

// k Gaussian clusters in d dimensions at seeded random centers with pairwise
// center distance >= separation.
Dataset gen_blobs(int n_per_class, int k_classes, int dim, double separation,
                  double noise_std, std::uint64_t seed);

// CSV with header "label,f0,f1,...". Features are written with 17 significant
// digits so round trips are lossless.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

struct SplitResult {
  Dataset train, val, test;
};

// Seeded permutation, then contiguous cut. Val/test sizes round down; the
// remainder goes to train.
SplitResult split(const Dataset& ds, double train_ratio, double val_ratio,
                  double test_ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary layout: magic "MBNC", u32 LE format version (=1), u32 LE header
// length, UTF-8 JSON header, then param_count little-endian IEEE-754 doubles.
// The header carries {role, dtype, param_count, spec, metadata}.
//
// Roles and payloads:
//   mode           one parameter vector for spec (an ArchSpec)
//   curve_pinpoint theta_i, theta_be, theta_j concatenated (3x arch params)
//   bridge         bridge parameter vector; spec describes the bridge, and
//                  metadata records the curve identity
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::string role;
  nlohmann::json spec;
  nlohmann::json metadata;
  std::vector<double> payload;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Arch serialization shared by checkpoints and configs.
nlohmann::json arch_to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const nlohmann::json& j);

// Typed wrappers. Loaders validate the role and parameter counts.
Checkpoint mode_checkpoint(const Network& net, std::uint64_t seed);
Network load_mode(const std::string& path);

struct BezierCurve;  // subspace.hpp
Checkpoint curve_checkpoint(const BezierCurve& curve);
BezierCurve load_curve(const std::string& path);

struct BridgeModel;  // bridge.hpp
Checkpoint bridge_checkpoint(const BridgeModel& bridge);
BridgeModel load_bridge(const std::string& path);

// Writes via a temporary file and renames, so failures leave no partial file.
void atomic_write(const std::string& path, const std::string& bytes);

}  // namespace mbnc
