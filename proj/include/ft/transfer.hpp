#pragma once

// Feature-space transfer layers: small maps applied to a pooled video
// feature so that a frozen still-image classifier can score it.
//
// Kinds (d = feature dimensionality):
//   identity   tau(x) = x                                   0 params
//   fc         tau(x) = Q x, dense Q                        d^2 params
//   affine     tau(x) = a .* x + b                          2d params
//   stacked    tau(x) = a2 .* relu(a1 .* x + b1) + b2       4d params
//   residual   stacked plus a skip connection:  + x         4d params
//
// The diagonal/elementwise forms deliberately carry orders of magnitude
// fewer parameters than fc (16,777,216 vs 8,192 at d = 4096), which is the
// point: tiny maps resist overfitting when labeled target tracks are scarce.
//
// relu'(0) is taken as 0.  Gradient-vs-finite-difference harnesses should
// resample points whose pre-activations sit within 1e-6 of the kink.
//
// Checkpoint container (binary, little-endian, magic "WTAU"):
//   "WTAU" | version u16 (=1) | kind u8 | d_x u32
//   | parameters as float32 in field order (fc: Q row by row;
//     affine: alpha, beta; stacked/residual: alpha1, beta1, alpha2, beta2)

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ft/numerics.hpp"

namespace ft {

enum class TransferKind : std::uint8_t {
  identity = 0,
  fc = 1,
  affine = 2,
  stacked_affine = 3,
  residual_stacked_affine = 4,
};

std::string transfer_kind_name(TransferKind k);
TransferKind parse_transfer_kind(const std::string& name);

// Number of trainable scalars for a kind at dimensionality d.
std::size_t transfer_param_count(TransferKind k, std::size_t d);

struct TransferLayer {
  TransferKind kind = TransferKind::identity;
  std::size_t dim = 0;
  Matrix q;                     // fc only, d x d
  Vec alpha1, beta1;            // affine / stacked / residual
  Vec alpha2, beta2;            // stacked / residual only

  // Parameters that make tau the identity map: Q = I, alpha = 1, beta = 0;
  // for the stacked kinds the residual variant is exactly the identity
  // (alpha2 = 0 kills the nonlinear branch) while the plain stacked kind
  // (alpha = 1, beta = 0) reduces to relu and is the identity only on
  // non-negative inputs.
  static TransferLayer identity_params(TransferKind k, std::size_t dim);

  // Random parameters for gradient-check points.
  static TransferLayer random_params(TransferKind k, std::size_t dim,
                                     Rng& rng);

  std::size_t param_count() const {
    return transfer_param_count(kind, dim);
  }

  // Views over the live parameter storage, in checkpoint field order.
  std::vector<std::span<double>> param_blocks();
  std::vector<std::span<const double>> param_blocks() const;
};

// tau(psi)
Vec tau_forward(const TransferLayer& layer, const Vec& psi);

// Gradients of upstream^T d tau(psi): parameter gradients shaped like the
// layer plus the gradient with respect to the input psi.
struct TauGrad {
  TransferLayer params;  // same kind/dim, gradient values
  Vec psi;
};
TauGrad tau_backward(const TransferLayer& layer, const Vec& psi,
                     const Vec& upstream);

std::string encode_transfer(const TransferLayer& layer);
TransferLayer decode_transfer(const std::string& bytes);
void save_transfer(const TransferLayer& layer,
                   const std::filesystem::path& path);
TransferLayer load_transfer(const std::filesystem::path& path);

}  // namespace ft
