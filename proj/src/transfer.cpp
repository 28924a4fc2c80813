#include "ft/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ft/detail/bytes.hpp"

namespace ft {

namespace {

constexpr char kMagic[4] = {'W', 'T', 'A', 'U'};
constexpr std::uint16_t kVersion = 1;

void require_dim(const TransferLayer& layer, const Vec& psi) {
  if (psi.size() != layer.dim)
    throw std::invalid_argument("transfer layer dim " +
                                std::to_string(layer.dim) +
                                " does not match input length " +
                                std::to_string(psi.size()));
}

}  // namespace

std::string transfer_kind_name(TransferKind k) {
  switch (k) {
    case TransferKind::identity: return "none";
    case TransferKind::fc: return "fc";
    case TransferKind::affine: return "affine";
    case TransferKind::stacked_affine: return "stacked";
    case TransferKind::residual_stacked_affine: return "rsa";
  }
  throw std::logic_error("transfer_kind_name: bad kind");
}

TransferKind parse_transfer_kind(const std::string& name) {
  if (name == "none" || name == "identity") return TransferKind::identity;
  if (name == "fc") return TransferKind::fc;
  if (name == "affine") return TransferKind::affine;
  if (name == "stacked") return TransferKind::stacked_affine;
  if (name == "rsa") return TransferKind::residual_stacked_affine;
  throw std::invalid_argument("unknown transfer kind '" + name + "'");
}

std::size_t transfer_param_count(TransferKind k, std::size_t d) {
  switch (k) {
    case TransferKind::identity: return 0;
    case TransferKind::fc: return d * d;
    case TransferKind::affine: return 2 * d;
    case TransferKind::stacked_affine:
    case TransferKind::residual_stacked_affine: return 4 * d;
  }
  throw std::logic_error("transfer_param_count: bad kind");
}

TransferLayer TransferLayer::identity_params(TransferKind k,
                                             std::size_t dim) {
  TransferLayer layer;
  layer.kind = k;
  layer.dim = dim;
  switch (k) {
    case TransferKind::identity:
      break;
    case TransferKind::fc:
      layer.q = Matrix::identity(dim);
      break;
    case TransferKind::affine:
      layer.alpha1.assign(dim, 1.0);
      layer.beta1.assign(dim, 0.0);
      break;
    case TransferKind::stacked_affine:
      layer.alpha1.assign(dim, 1.0);
      layer.beta1.assign(dim, 0.0);
      layer.alpha2.assign(dim, 1.0);
      layer.beta2.assign(dim, 0.0);
      break;
    case TransferKind::residual_stacked_affine:
      // alpha2 = 0 silences the nonlinear branch; the skip carries psi.
      layer.alpha1.assign(dim, 1.0);
      layer.beta1.assign(dim, 0.0);
      layer.alpha2.assign(dim, 0.0);
      layer.beta2.assign(dim, 0.0);
      break;
  }
  return layer;
}

TransferLayer TransferLayer::random_params(TransferKind k, std::size_t dim,
                                           Rng& rng) {
  TransferLayer layer = identity_params(k, dim);
  switch (k) {
    case TransferKind::identity:
      break;
    case TransferKind::fc:
      layer.q = xavier_init(dim, dim, rng);
      break;
    case TransferKind::affine:
      for (double& v : layer.alpha1) v = rng.uniform(0.5, 1.5);
      for (double& v : layer.beta1) v = rng.uniform(-0.5, 0.5);
      break;
    case TransferKind::stacked_affine:
    case TransferKind::residual_stacked_affine:
      for (double& v : layer.alpha1) v = rng.uniform(0.5, 1.5);
      for (double& v : layer.beta1) v = rng.uniform(-0.5, 0.5);
      for (double& v : layer.alpha2) v = rng.uniform(0.5, 1.5);
      for (double& v : layer.beta2) v = rng.uniform(-0.5, 0.5);
      break;
  }
  return layer;
}

std::vector<std::span<double>> TransferLayer::param_blocks() {
  switch (kind) {
    case TransferKind::identity: return {};
    case TransferKind::fc: return {std::span<double>(q.data)};
    case TransferKind::affine:
      return {std::span<double>(alpha1), std::span<double>(beta1)};
    case TransferKind::stacked_affine:
    case TransferKind::residual_stacked_affine:
      return {std::span<double>(alpha1), std::span<double>(beta1),
              std::span<double>(alpha2), std::span<double>(beta2)};
  }
  throw std::logic_error("param_blocks: bad kind");
}

std::vector<std::span<const double>> TransferLayer::param_blocks() const {
  std::vector<std::span<const double>> out;
  for (auto s : const_cast<TransferLayer*>(this)->param_blocks())
    out.emplace_back(s.data(), s.size());
  return out;
}

Vec tau_forward(const TransferLayer& layer, const Vec& psi) {
  require_dim(layer, psi);
  switch (layer.kind) {
    case TransferKind::identity:
      return psi;
    case TransferKind::fc:
      return matvec(layer.q, psi);
    case TransferKind::affine: {
      Vec out(layer.dim);
      for (std::size_t i = 0; i < layer.dim; ++i)
        out[i] = layer.alpha1[i] * psi[i] + layer.beta1[i];
      return out;
    }
    case TransferKind::stacked_affine:
    case TransferKind::residual_stacked_affine: {
      Vec out(layer.dim);
      const bool residual =
          layer.kind == TransferKind::residual_stacked_affine;
      for (std::size_t i = 0; i < layer.dim; ++i) {
        const double h = layer.alpha1[i] * psi[i] + layer.beta1[i];
        const double r = h > 0.0 ? h : 0.0;
        out[i] = layer.alpha2[i] * r + layer.beta2[i];
        if (residual) out[i] += psi[i];
      }
      return out;
    }
  }
  throw std::logic_error("tau_forward: bad kind");
}

TauGrad tau_backward(const TransferLayer& layer, const Vec& psi,
                     const Vec& upstream) {
  require_dim(layer, psi);
  if (upstream.size() != layer.dim)
    throw std::invalid_argument("tau_backward: upstream length mismatch");
  TauGrad g;
  g.params.kind = layer.kind;
  g.params.dim = layer.dim;
  g.psi.assign(layer.dim, 0.0);
  switch (layer.kind) {
    case TransferKind::identity:
      g.psi = upstream;
      return g;
    case TransferKind::fc: {
      g.params.q = Matrix(layer.dim, layer.dim, 0.0);
      for (std::size_t r = 0; r < layer.dim; ++r)
        for (std::size_t c = 0; c < layer.dim; ++c)
          g.params.q.at(r, c) = upstream[r] * psi[c];
      g.psi = matvec_transposed(layer.q, upstream);
      return g;
    }
    case TransferKind::affine: {
      g.params.alpha1.assign(layer.dim, 0.0);
      g.params.beta1.assign(layer.dim, 0.0);
      for (std::size_t i = 0; i < layer.dim; ++i) {
        g.params.alpha1[i] = upstream[i] * psi[i];
        g.params.beta1[i] = upstream[i];
        g.psi[i] = upstream[i] * layer.alpha1[i];
      }
      return g;
    }
    case TransferKind::stacked_affine:
    case TransferKind::residual_stacked_affine: {
      const bool residual =
          layer.kind == TransferKind::residual_stacked_affine;
      g.params.alpha1.assign(layer.dim, 0.0);
      g.params.beta1.assign(layer.dim, 0.0);
      g.params.alpha2.assign(layer.dim, 0.0);
      g.params.beta2.assign(layer.dim, 0.0);
      for (std::size_t i = 0; i < layer.dim; ++i) {
        const double h = layer.alpha1[i] * psi[i] + layer.beta1[i];
        const double r = h > 0.0 ? h : 0.0;
        g.params.alpha2[i] = upstream[i] * r;
        g.params.beta2[i] = upstream[i];
        const double dh = h > 0.0 ? upstream[i] * layer.alpha2[i] : 0.0;
        g.params.alpha1[i] = dh * psi[i];
        g.params.beta1[i] = dh;
        g.psi[i] = dh * layer.alpha1[i];
        if (residual) g.psi[i] += upstream[i];
      }
      return g;
    }
  }
  throw std::logic_error("tau_backward: bad kind");
}

std::string encode_transfer(const TransferLayer& layer) {
  std::string out;
  out.append(kMagic, 4);
  detail::put_u16(out, kVersion);
  out.push_back(static_cast<char>(layer.kind));
  detail::put_u32(out, static_cast<std::uint32_t>(layer.dim));
  for (auto block : layer.param_blocks())
    for (double v : block) detail::put_f32(out, static_cast<float>(v));
  return out;
}

TransferLayer decode_transfer(const std::string& bytes) {
  detail::ByteReader r(bytes);
  auto fail = [&r](const std::string& msg) {
    return std::runtime_error(msg + " (byte offset " +
                              std::to_string(r.offset()) + ")");
  };
  try {
    if (r.str(4) != std::string(kMagic, 4))
      throw fail("bad magic, expected 'WTAU'");
    if (r.u16() != kVersion) throw fail("unsupported WTAU version");
    const std::uint8_t kind_byte = r.u8();
    if (kind_byte > 4) throw fail("unknown transfer kind byte");
    const auto kind = static_cast<TransferKind>(kind_byte);
    const std::uint32_t dim = r.u32();
    if (dim == 0) throw fail("transfer dim is zero");
    TransferLayer layer = TransferLayer::identity_params(kind, dim);
    for (auto block : layer.param_blocks())
      for (double& v : block) v = static_cast<double>(r.f32());
    if (!r.exhausted()) throw fail("trailing bytes after WTAU");
    return layer;
  } catch (const std::out_of_range&) {
    throw std::runtime_error("WTAU checkpoint truncated");
  }
}

void save_transfer(const TransferLayer& layer,
                   const std::filesystem::path& path) {
  detail::atomic_write_file(path, encode_transfer(layer));
}

TransferLayer load_transfer(const std::filesystem::path& path) {
  return decode_transfer(detail::read_file_bytes(path));
}

}  // namespace ft
