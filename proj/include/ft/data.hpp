#pragma once

// Feature datasets, class partitions, and their on-disk formats.
//
// Feature container (binary, little-endian, magic "FTRS"):
//   header: "FTRS" | version u16 (=1) | d_x u32 | record_count u64
//   record: id_len u16 | id bytes (UTF-8) | class_id u32 | domain u8
//           (0 = still image, 1 = video track) | frame_count u32
//           | frame_count * d_x float32 features
// Still images must carry exactly one frame.  Features are stored as 32-bit
// floats and widened to double on load; training arithmetic is all double.
// Writing is deterministic: the same dataset always produces the same bytes,
// and write(read(file)) is a byte identity.
//
// Partition file (UTF-8 text): one class per line,
//   <class_id> <name> <role>        role in {seen, unseen, val-extra}
// '#' starts a comment; blank lines are ignored; names contain no spaces.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ft/numerics.hpp"

namespace ft {

using ClassId = std::uint32_t;

enum class Role : std::uint8_t { seen = 0, unseen = 1, val_extra = 2 };

std::string role_name(Role r);
Role parse_role(const std::string& token);  // throws on unknown token

// A still image: one feature vector in the source (image) domain.
struct ImageExample {
  std::string id;
  ClassId class_id = 0;
  Vec features;
};

// A video face track: an ordered sequence of per-frame feature vectors.
struct FaceTrack {
  std::string id;
  ClassId class_id = 0;
  std::vector<Vec> frames;
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

// Images and tracks sharing one feature dimensionality.  The split tag is
// metadata assigned by the caller (it is not stored in the container).
struct FeatureDataset {
  std::size_t dim = 0;
  Split split = Split::train;
  std::vector<ImageExample> images;
  std::vector<FaceTrack> tracks;

  std::size_t record_count() const { return images.size() + tracks.size(); }
};

// The label space: every class id with its display name and role.
struct ClassPartition {
  struct Entry {
    ClassId id = 0;
    std::string name;
    Role role = Role::seen;
  };
  std::vector<Entry> classes;  // in file / construction order

  bool contains(ClassId id) const;
  Role role_of(ClassId id) const;  // throws for unknown ids
  std::vector<ClassId> ids_with_role(Role r) const;
  std::vector<ClassId> all_ids() const;
  std::size_t count(Role r) const;

  // Order-insensitive digest of (id, role) pairs; evaluation reports carry
  // it so aggregation can refuse to mix mismatched partitions.
  std::uint64_t fingerprint() const;

  // Requires unique ids, at least one seen and one unseen class.
  void validate() const;
};

// Error kinds raised while parsing the binary feature container.
struct FormatError : std::runtime_error {
  enum class Kind {
    bad_magic,
    bad_version,
    truncated,
    bad_record,
    non_finite,
    dim_mismatch,
    trailing_bytes,
  };
  FormatError(Kind k, std::uint64_t byte_offset, const std::string& msg)
      : std::runtime_error(msg + " (byte offset " +
                           std::to_string(byte_offset) + ")"),
        kind(k),
        offset(byte_offset) {}
  Kind kind;
  std::uint64_t offset;
};

std::string encode_feature_file(const FeatureDataset& ds);
void write_feature_file(const FeatureDataset& ds,
                        const std::filesystem::path& path);
FeatureDataset decode_feature_file(const std::string& bytes,
                                   Split split = Split::train);
FeatureDataset read_feature_file(const std::filesystem::path& path,
                                 Split split = Split::train);

ClassPartition load_partition(const std::filesystem::path& path);
std::string encode_partition(const ClassPartition& p);
void save_partition(const ClassPartition& p,
                    const std::filesystem::path& path);

// One rule violation discovered by validate_dataset.
struct ValidationIssue {
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> violations;
  bool ok() const { return violations.empty(); }
};

// Cross-checks a dataset against a partition:
//   - every referenced class id exists in the partition
//   - a train split carries no tracks of unseen-role classes
//   - images have exactly one frame-worth of features of the right width
// (Images may cover all roles in any split.)
ValidationReport validate_dataset(const FeatureDataset& ds,
                                  const ClassPartition& partition);

}  // namespace ft
