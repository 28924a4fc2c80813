#include "ft/transfer.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "doctest.h"
#include "ft/numerics.hpp"

using ft::Rng;
using ft::TransferKind;
using ft::TransferLayer;
using ft::Vec;

namespace {

const TransferKind kAllKinds[] = {
    TransferKind::identity, TransferKind::fc, TransferKind::affine,
    TransferKind::stacked_affine, TransferKind::residual_stacked_affine};

Vec flatten(const TransferLayer& layer) {
  Vec out;
  for (auto block : layer.param_blocks())
    out.insert(out.end(), block.begin(), block.end());
  return out;
}

void unflatten(TransferLayer& layer, const Vec& flat) {
  std::size_t k = 0;
  for (auto block : layer.param_blocks())
    for (double& v : block) v = flat[k++];
}

}  // namespace

TEST_SUITE_BEGIN("transfer");

TEST_CASE("parameter counts: dense map vs elementwise maps") {
  CHECK(ft::transfer_param_count(TransferKind::fc, 4096) == 16777216);
  CHECK(ft::transfer_param_count(TransferKind::affine, 4096) == 8192);
  CHECK(ft::transfer_param_count(TransferKind::stacked_affine, 4096) ==
        16384);
  CHECK(ft::transfer_param_count(TransferKind::residual_stacked_affine,
                                 4096) == 16384);
  CHECK(ft::transfer_param_count(TransferKind::identity, 4096) == 0);
  for (TransferKind k : kAllKinds) {
    TransferLayer layer = TransferLayer::identity_params(k, 16);
    CHECK(flatten(layer).size() == layer.param_count());
  }
}

TEST_CASE("kind names round-trip") {
  for (TransferKind k : kAllKinds)
    CHECK(ft::parse_transfer_kind(ft::transfer_kind_name(k)) == k);
  CHECK_THROWS_AS(ft::parse_transfer_kind("mmd"), std::invalid_argument);
}

TEST_CASE("affine forward matches a hand-worked example") {
  TransferLayer layer = TransferLayer::identity_params(TransferKind::affine, 2);
  layer.alpha1 = {2.0, 0.5};
  layer.beta1 = {1.0, -1.0};
  CHECK(ft::tau_forward(layer, {3.0, 4.0}) == Vec{7.0, 1.0});
}

TEST_CASE("residual stacked forward matches a hand-worked example") {
  // identity first stage, identity second stage: out = relu(x) + x
  TransferLayer layer =
      TransferLayer::identity_params(TransferKind::residual_stacked_affine, 2);
  layer.alpha2 = {1.0, 1.0};
  CHECK(ft::tau_forward(layer, {-1.0, 2.0}) == Vec{-1.0, 4.0});
}

TEST_CASE("identity parameters reproduce the input bitwise") {
  Rng rng(5);
  Vec psi(8);
  for (double& v : psi) v = rng.normal(0, 2);
  for (TransferKind k : {TransferKind::identity, TransferKind::fc,
                         TransferKind::affine,
                         TransferKind::residual_stacked_affine}) {
    TransferLayer layer = TransferLayer::identity_params(k, psi.size());
    const Vec out = ft::tau_forward(layer, psi);
    CHECK_MESSAGE(out == psi, "kind ", ft::transfer_kind_name(k));
  }
  // the plain stacked kind clips at zero, so it is the identity only on
  // non-negative inputs
  Vec pos = psi;
  for (double& v : pos) v = std::abs(v);
  TransferLayer stacked =
      TransferLayer::identity_params(TransferKind::stacked_affine, pos.size());
  CHECK(ft::tau_forward(stacked, pos) == pos);
  CHECK(ft::tau_forward(stacked, {-3.0, 1.0, -0.5, 2, 2, 2, 2, 2}) ==
        Vec{0.0, 1.0, 0.0, 2, 2, 2, 2, 2});
}

TEST_CASE("backward: bias gradient equals the upstream vector") {
  Rng rng(9);
  Vec psi(6), up(6);
  for (double& v : psi) v = rng.normal(0, 1);
  for (double& v : up) v = rng.normal(0, 1);
  TransferLayer layer =
      TransferLayer::random_params(TransferKind::affine, 6, rng);
  const auto g = ft::tau_backward(layer, psi, up);
  CHECK(g.params.beta1 == up);
}

TEST_CASE("backward: fully saturated residual layer passes upstream through") {
  // All pre-activations negative: the relu branch is dead, so the input
  // gradient is exactly the upstream (via the skip connection).
  TransferLayer layer =
      TransferLayer::identity_params(TransferKind::residual_stacked_affine, 3);
  layer.beta1 = {-10.0, -10.0, -10.0};
  layer.alpha2 = {0.7, 0.8, 0.9};
  Vec psi = {0.1, 0.2, 0.3};
  Vec up = {1.5, -2.5, 0.5};
  const auto g = ft::tau_backward(layer, psi, up);
  CHECK(g.psi == up);
  CHECK(g.params.alpha1 == Vec{0.0, 0.0, 0.0});
  CHECK(g.params.alpha2 == Vec{0.0, 0.0, 0.0});
}

TEST_CASE("backward matches finite differences for every kind") {
  Rng rng(77);
  const std::size_t d = 5;
  for (TransferKind k :
       {TransferKind::fc, TransferKind::affine, TransferKind::stacked_affine,
        TransferKind::residual_stacked_affine}) {
    for (int point = 0; point < 10; ++point) {
      TransferLayer layer = TransferLayer::random_params(k, d, rng);
      Vec psi(d), up(d);
      for (double& v : psi) v = rng.normal(0, 1);
      for (double& v : up) v = rng.normal(0, 1);
      // keep pre-activations away from the relu kink
      if (k == TransferKind::stacked_affine ||
          k == TransferKind::residual_stacked_affine) {
        bool near = true;
        while (near) {
          near = false;
          for (std::size_t i = 0; i < d; ++i)
            if (std::abs(layer.alpha1[i] * psi[i] + layer.beta1[i]) < 1e-3)
              near = true;
          if (near)
            for (double& v : psi) v = rng.normal(0, 1);
        }
      }
      const auto analytic = ft::tau_backward(layer, psi, up);

      // check d(up . tau(psi)) / d params
      auto fn_params = [&](const Vec& flat) {
        TransferLayer probe = layer;
        unflatten(probe, flat);
        const Vec out = ft::tau_forward(probe, psi);
        double s = 0;
        for (std::size_t i = 0; i < d; ++i) s += up[i] * out[i];
        return s;
      };
      auto res = ft::check_gradient(ft::transfer_kind_name(k) + "-params",
                                    fn_params, flatten(layer),
                                    flatten(analytic.params));
      CHECK_MESSAGE(res.pass, res.name, ": ", res.detail);

      // check d(up . tau(psi)) / d psi
      auto fn_psi = [&](const Vec& x) {
        const Vec out = ft::tau_forward(layer, x);
        double s = 0;
        for (std::size_t i = 0; i < d; ++i) s += up[i] * out[i];
        return s;
      };
      auto res_psi = ft::check_gradient(ft::transfer_kind_name(k) + "-input",
                                        fn_psi, psi, analytic.psi);
      CHECK_MESSAGE(res_psi.pass, res_psi.name, ": ", res_psi.detail);
    }
  }
}

TEST_CASE("checkpoints round-trip every kind") {
  Rng rng(31);
  for (TransferKind k : kAllKinds) {
    TransferLayer layer = TransferLayer::random_params(k, 7, rng);
    // quantize to storage precision so the round trip is exact
    for (auto block : layer.param_blocks())
      for (double& v : block) v = static_cast<double>(static_cast<float>(v));
    const std::string bytes = ft::encode_transfer(layer);
    const TransferLayer back = ft::decode_transfer(bytes);
    CHECK(back.kind == layer.kind);
    CHECK(back.dim == layer.dim);
    CHECK(flatten(back) == flatten(layer));
    CHECK(ft::encode_transfer(back) == bytes);
  }
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "ft_tau_rt.wtau";
  TransferLayer layer =
      TransferLayer::identity_params(TransferKind::affine, 3);
  ft::save_transfer(layer, path);
  const TransferLayer back = ft::load_transfer(path);
  CHECK(back.alpha1 == layer.alpha1);
  fs::remove(path);
}

TEST_CASE("checkpoint decoder rejects corrupt input") {
  TransferLayer layer =
      TransferLayer::identity_params(TransferKind::affine, 3);
  std::string bytes = ft::encode_transfer(layer);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(ft::decode_transfer(bad_magic), std::runtime_error);
  CHECK_THROWS_AS(ft::decode_transfer(bytes.substr(0, bytes.size() - 2)),
                  std::runtime_error);
}

TEST_CASE("forward/backward validate dimensions") {
  TransferLayer layer = TransferLayer::identity_params(TransferKind::affine, 3);
  CHECK_THROWS_AS(ft::tau_forward(layer, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(ft::tau_backward(layer, {1.0, 2.0, 3.0}, {1.0}),
                  std::invalid_argument);
}

TEST_SUITE_END();
