#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/geom.hpp"
#include "geoadapt/rng.hpp"

namespace geoadapt::dataset {

enum class Domain { source, target };
enum class Split { train, test };

std::string to_string(Domain d);
std::string to_string(Split s);
Domain domain_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// The eight shape classes the generator can draw from; `classes = N` selects
// the first N.
const std::vector<std::string>& primitive_names();

struct SampleRecord {
  std::string file;  // relative to the manifest's directory
  std::optional<int> label;
  Domain domain = Domain::source;
  Split split = Split::train;
};

struct Manifest {
  int version = 1;
  std::uint64_t seed = 0;
  Domain domain = Domain::source;
  int points = 0;
  int per_class = 0;
  std::vector<std::string> class_names;
  std::vector<SampleRecord> samples;
};

Manifest load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const std::filesystem::path& manifest_path,
                   const Manifest& manifest);

struct GenParams {
  int classes = 6;
  int per_class = 100;
  int points = 256;
  std::uint64_t seed = 1;
};

// Writes <out>/source/{manifest.json, clouds/*.pcl} and <out>/target/...
// Source clouds are clean surface samples with per-instance aspect scaling
// and a random z rotation; target clouds additionally get a half-space view
// crop, a view-biased resample back to `points`, and additive Gaussian noise.
// Both domains are unit-ball normalized. The split is stratified 80/20 per
// class. Identical params reproduce identical files.
void generate_benchmark(const std::filesystem::path& out_dir,
                        const GenParams& params);

// Cloud file: magic "PCL1", u32 LE point count m, then 3*m f32 LE (x,y,z).
void write_cloud(const std::filesystem::path& path,
                 const geom::PointCloud& cloud);
geom::PointCloud read_cloud(const std::filesystem::path& path);

// Uniform random subset without replacement; input order preserved.
geom::PointCloud downsample(const geom::PointCloud& cloud, std::size_t n,
                            Rng& rng);

// In-memory dataset. Clouds are re-normalized on load, restoring the exact
// unit-ball invariants after the file format's float32 quantization.
struct LoadedDataset {
  Domain domain = Domain::source;
  std::vector<std::string> class_names;
  std::vector<geom::PointCloud> clouds;
  std::vector<int> labels;  // -1 when the manifest has no label
  std::vector<Split> splits;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  const std::vector<std::size_t>& indices(Split s) const {
    return s == Split::train ? train_indices : test_indices;
  }
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace geoadapt::dataset
