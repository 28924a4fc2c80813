#include "ft/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ft/detail/bytes.hpp"

namespace ft {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'R', 'S'};
constexpr std::uint16_t kVersion = 1;

}  // namespace

std::string role_name(Role r) {
  switch (r) {
    case Role::seen: return "seen";
    case Role::unseen: return "unseen";
    case Role::val_extra: return "val-extra";
  }
  throw std::logic_error("role_name: bad role");
}

Role parse_role(const std::string& token) {
  if (token == "seen") return Role::seen;
  if (token == "unseen") return Role::unseen;
  if (token == "val-extra") return Role::val_extra;
  throw std::invalid_argument("unknown role token '" + token + "'");
}

bool ClassPartition::contains(ClassId id) const {
  return std::any_of(classes.begin(), classes.end(),
                     [id](const Entry& e) { return e.id == id; });
}

Role ClassPartition::role_of(ClassId id) const {
  for (const Entry& e : classes)
    if (e.id == id) return e.role;
  throw std::invalid_argument("class id " + std::to_string(id) +
                              " not in partition");
}

std::vector<ClassId> ClassPartition::ids_with_role(Role r) const {
  std::vector<ClassId> out;
  for (const Entry& e : classes)
    if (e.role == r) out.push_back(e.id);
  return out;
}

std::vector<ClassId> ClassPartition::all_ids() const {
  std::vector<ClassId> out;
  out.reserve(classes.size());
  for (const Entry& e : classes) out.push_back(e.id);
  return out;
}

std::size_t ClassPartition::count(Role r) const {
  return ids_with_role(r).size();
}

std::uint64_t ClassPartition::fingerprint() const {
  // FNV-1a over sorted (id, role) pairs, so entry order is irrelevant.
  std::vector<std::pair<ClassId, std::uint8_t>> pairs;
  for (const Entry& e : classes)
    pairs.emplace_back(e.id, static_cast<std::uint8_t>(e.role));
  std::sort(pairs.begin(), pairs.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (const auto& [id, role] : pairs) {
    for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>(id >> (8 * i)));
    mix(role);
  }
  return h;
}

void ClassPartition::validate() const {
  std::set<ClassId> ids;
  for (const Entry& e : classes)
    if (!ids.insert(e.id).second)
      throw std::invalid_argument("duplicate class id " +
                                  std::to_string(e.id) + " in partition");
  if (count(Role::seen) == 0)
    throw std::invalid_argument("partition has no seen classes");
  if (count(Role::unseen) == 0)
    throw std::invalid_argument("partition has no unseen classes");
}

namespace {

void encode_record(std::string& out, const std::string& id, ClassId class_id,
                   std::uint8_t domain, const std::vector<const Vec*>& frames,
                   std::size_t dim) {
  if (id.size() > 0xffff)
    throw std::invalid_argument("record id longer than 65535 bytes: " + id);
  detail::put_u16(out, static_cast<std::uint16_t>(id.size()));
  out.append(id);
  detail::put_u32(out, class_id);
  out.push_back(static_cast<char>(domain));
  detail::put_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (const Vec* f : frames) {
    if (f->size() != dim)
      throw std::invalid_argument("record " + id + " has frame width " +
                                  std::to_string(f->size()) +
                                  ", dataset dim is " + std::to_string(dim));
    for (double v : *f) {
      if (!std::isfinite(v))
        throw std::invalid_argument("record " + id +
                                    " has a non-finite feature value");
      detail::put_f32(out, static_cast<float>(v));
    }
  }
}

}  // namespace

std::string encode_feature_file(const FeatureDataset& ds) {
  if (ds.dim == 0) throw std::invalid_argument("dataset dim is zero");
  std::string out;
  out.append(kMagic, 4);
  detail::put_u16(out, kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.dim));
  detail::put_u64(out, ds.record_count());
  for (const ImageExample& im : ds.images)
    encode_record(out, im.id, im.class_id, 0, {&im.features}, ds.dim);
  for (const FaceTrack& tr : ds.tracks) {
    if (tr.frames.empty())
      throw std::invalid_argument("track " + tr.id + " has no frames");
    std::vector<const Vec*> frames;
    frames.reserve(tr.frames.size());
    for (const Vec& f : tr.frames) frames.push_back(&f);
    encode_record(out, tr.id, tr.class_id, 1, frames, ds.dim);
  }
  return out;
}

void write_feature_file(const FeatureDataset& ds,
                        const std::filesystem::path& path) {
  detail::atomic_write_file(path, encode_feature_file(ds));
}

FeatureDataset decode_feature_file(const std::string& bytes, Split split) {
  detail::ByteReader r(bytes);
  auto fail = [&r](FormatError::Kind k, const std::string& msg) -> FormatError {
    return FormatError(k, r.offset(), msg);
  };
  try {
    const std::string magic = r.str(4);
    if (magic != std::string(kMagic, 4))
      throw FormatError(FormatError::Kind::bad_magic, 0,
                        "bad magic '" + magic + "', expected 'FTRS'");
    const std::uint16_t version = r.u16();
    if (version != kVersion)
      throw fail(FormatError::Kind::bad_version,
                 "unsupported container version " + std::to_string(version));
    const std::uint32_t dim = r.u32();
    if (dim == 0)
      throw fail(FormatError::Kind::bad_record, "feature dim is zero");
    const std::uint64_t count = r.u64();

    FeatureDataset ds;
    ds.dim = dim;
    ds.split = split;
    for (std::uint64_t rec = 0; rec < count; ++rec) {
      try {
        const std::uint16_t id_len = r.u16();
        const std::string id = r.str(id_len);
        const ClassId class_id = r.u32();
        const std::uint8_t domain = r.u8();
        if (domain > 1)
          throw fail(FormatError::Kind::bad_record,
                     "record " + std::to_string(rec) + " ('" + id +
                         "') has unknown domain tag " +
                         std::to_string(domain));
        const std::uint32_t frame_count = r.u32();
        if (frame_count == 0)
          throw fail(FormatError::Kind::bad_record,
                     "record " + std::to_string(rec) + " ('" + id +
                         "') has zero frames");
        if (domain == 0 && frame_count != 1)
          throw fail(FormatError::Kind::bad_record,
                     "image record " + std::to_string(rec) + " ('" + id +
                         "') has " + std::to_string(frame_count) +
                         " frames, images must have exactly 1");
        std::vector<Vec> frames(frame_count, Vec(dim));
        for (auto& frame : frames)
          for (double& v : frame) {
            const float f = r.f32();
            if (!std::isfinite(f))
              throw fail(FormatError::Kind::non_finite,
                         "record " + std::to_string(rec) + " ('" + id +
                             "') has a non-finite feature");
            v = static_cast<double>(f);
          }
        if (domain == 0) {
          ImageExample im;
          im.id = id;
          im.class_id = class_id;
          im.features = std::move(frames[0]);
          ds.images.push_back(std::move(im));
        } else {
          FaceTrack tr;
          tr.id = id;
          tr.class_id = class_id;
          tr.frames = std::move(frames);
          ds.tracks.push_back(std::move(tr));
        }
      } catch (const std::out_of_range&) {
        throw fail(FormatError::Kind::truncated,
                   "file truncated inside record " + std::to_string(rec) +
                       " of " + std::to_string(count));
      }
    }
    if (!r.exhausted())
      throw fail(FormatError::Kind::trailing_bytes,
                 std::to_string(r.size() - r.offset()) +
                     " trailing bytes after the last record");
    return ds;
  } catch (const std::out_of_range&) {
    throw FormatError(FormatError::Kind::truncated, r.offset(),
                      "file truncated inside the header");
  }
}

FeatureDataset read_feature_file(const std::filesystem::path& path,
                                 Split split) {
  return decode_feature_file(detail::read_file_bytes(path), split);
}

ClassPartition load_partition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  ClassPartition p;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string id_tok, name, role_tok;
    if (!(ss >> id_tok)) continue;  // blank or comment-only line
    if (!(ss >> name >> role_tok))
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected '<class_id> <name> <role>'");
    std::string extra;
    if (ss >> extra)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": unexpected trailing token '" + extra + "'");
    ClassPartition::Entry e;
    try {
      const unsigned long v = std::stoul(id_tok);
      if (v > 0xffffffffUL) throw std::out_of_range("id");
      e.id = static_cast<ClassId>(v);
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": bad class id '" + id_tok + "'");
    }
    e.name = name;
    try {
      e.role = parse_role(role_tok);
    } catch (const std::invalid_argument& ex) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": " + ex.what());
    }
    p.classes.push_back(std::move(e));
  }
  try {
    p.validate();
  } catch (const std::invalid_argument& ex) {
    throw std::runtime_error(path.string() + ": " + ex.what());
  }
  return p;
}

std::string encode_partition(const ClassPartition& p) {
  std::string out;
  for (const auto& e : p.classes)
    out += std::to_string(e.id) + " " + e.name + " " + role_name(e.role) +
           "\n";
  return out;
}

void save_partition(const ClassPartition& p,
                    const std::filesystem::path& path) {
  detail::atomic_write_file(path, encode_partition(p));
}

ValidationReport validate_dataset(const FeatureDataset& ds,
                                  const ClassPartition& partition) {
  ValidationReport report;
  auto add = [&report](std::string msg) {
    report.violations.push_back({std::move(msg)});
  };
  for (const ImageExample& im : ds.images) {
    if (!partition.contains(im.class_id))
      add("image '" + im.id + "' references class " +
          std::to_string(im.class_id) + " absent from the partition");
    if (im.features.size() != ds.dim)
      add("image '" + im.id + "' has feature width " +
          std::to_string(im.features.size()) + ", dataset dim is " +
          std::to_string(ds.dim));
  }
  for (const FaceTrack& tr : ds.tracks) {
    if (!partition.contains(tr.class_id)) {
      add("track '" + tr.id + "' references class " +
          std::to_string(tr.class_id) + " absent from the partition");
    } else if (ds.split == Split::train &&
               partition.role_of(tr.class_id) == Role::unseen) {
      add("train split contains track '" + tr.id +
          "' of unseen-role class " + std::to_string(tr.class_id));
    }
    if (tr.frames.empty()) add("track '" + tr.id + "' has no frames");
    for (const Vec& f : tr.frames)
      if (f.size() != ds.dim) {
        add("track '" + tr.id + "' has a frame of width " +
            std::to_string(f.size()) + ", dataset dim is " +
            std::to_string(ds.dim));
        break;
      }
  }
  return report;
}

}  // namespace ft
