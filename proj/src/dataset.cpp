#include "geoadapt/dataset.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "geoadapt/binio.hpp"
#include "geoadapt/errors.hpp"

namespace geoadapt::dataset {

namespace {

constexpr char kCloudMagic[4] = {'P', 'C', 'L', '1'};
constexpr std::uint64_t kTagInstance = 0x6765'6e64'6174'6131ULL;

// Generator constants. These are part of the benchmark definition, so they
// are fixed here rather than exposed as knobs; regeneration from a manifest's
// recorded seed and counts reproduces files bit-exactly.
constexpr double kAspectMin = 0.75;
constexpr double kAspectMax = 1.3;
constexpr double kCropMin = 0.3;   // fraction of points removed by the view crop
constexpr double kCropMax = 0.5;
constexpr double kViewBias = 1.5;  // resample weight slope toward the viewpoint
constexpr double kTargetNoiseSigma = 0.02;
constexpr double kTestFraction = 0.2;

using geom::PointCloud;
using geom::Vec3;

Vec3 unit_direction(Rng& rng) {
  while (true) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-9) return v / n;
  }
}

// --- primitive surface samplers -------------------------------------------
// Each returns one uniform surface point of a unit-scale primitive whose
// instance parameters were drawn up front.

struct ShapeParams {
  double a = 1.0, b = 1.0, c = 1.0;
};

Vec3 sample_sphere(const ShapeParams&, Rng& rng) { return unit_direction(rng); }

Vec3 sample_box(const ShapeParams& p, Rng& rng) {
  const double hx = p.a, hy = p.b, hz = p.c;
  const double ax = hy * hz, ay = hx * hz, az = hx * hy;  // per-face area / 4
  const double total = 2.0 * (ax + ay + az);
  double u = rng.uniform() * total;
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double s = rng.uniform(-1.0, 1.0);
  const double t = rng.uniform(-1.0, 1.0);
  if (u < 2.0 * ax) return Vec3(sign * hx, s * hy, t * hz);
  u -= 2.0 * ax;
  if (u < 2.0 * ay) return Vec3(s * hx, sign * hy, t * hz);
  return Vec3(s * hx, t * hy, sign * hz);
}

Vec3 sample_cylinder(const ShapeParams& p, Rng& rng) {
  const double r = p.a, hh = p.b;
  const double side = 2.0 * 3.14159265358979323846 * r * (2.0 * hh);
  const double caps = 2.0 * 3.14159265358979323846 * r * r;
  const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  if (rng.uniform() * (side + caps) < side) {
    const double z = rng.uniform(-hh, hh);
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
  }
  const double rho = r * std::sqrt(rng.uniform());
  const double z = rng.uniform() < 0.5 ? -hh : hh;
  return Vec3(rho * std::cos(phi), rho * std::sin(phi), z);
}

Vec3 sample_cone(const ShapeParams& p, Rng& rng) {
  const double r = p.a, h = p.b;
  const double slant = std::sqrt(r * r + h * h);
  const double lateral = 3.14159265358979323846 * r * slant;
  const double base = 3.14159265358979323846 * r * r;
  const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  if (rng.uniform() * (lateral + base) < lateral) {
    const double t = std::sqrt(rng.uniform());  // area density grows with t
    return Vec3(r * t * std::cos(phi), r * t * std::sin(phi), h * (1.0 - t));
  }
  const double rho = r * std::sqrt(rng.uniform());
  return Vec3(rho * std::cos(phi), rho * std::sin(phi), 0.0);
}

Vec3 sample_torus(const ShapeParams& p, Rng& rng) {
  const double R = p.a, r = p.b;
  while (true) {
    const double u = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double v = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    // accept proportionally to the surface element (R + r cos v)
    if (rng.uniform() * (R + r) <= R + r * std::cos(v)) {
      const double w = R + r * std::cos(v);
      return Vec3(w * std::cos(u), w * std::sin(u), r * std::sin(v));
    }
  }
}

Vec3 sample_capsule(const ShapeParams& p, Rng& rng) {
  const double r = p.a, hh = p.b;
  const double side = 2.0 * 3.14159265358979323846 * r * (2.0 * hh);
  const double sphere = 4.0 * 3.14159265358979323846 * r * r;
  if (rng.uniform() * (side + sphere) < side) {
    const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double z = rng.uniform(-hh, hh);
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
  }
  const Vec3 d = unit_direction(rng);
  const double cap = d[2] >= 0.0 ? hh : -hh;
  return Vec3(r * d[0], r * d[1], r * d[2] + cap);
}

Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, Rng& rng) {
  const double su = std::sqrt(rng.uniform());
  const double v = rng.uniform();
  return (1.0 - su) * a + su * (1.0 - v) * b + su * v * c;
}

Vec3 sample_pyramid(const ShapeParams& p, Rng& rng) {
  const double b = p.a, h = p.b;
  const Vec3 apex(0.0, 0.0, h);
  const Vec3 c0(-b, -b, 0.0), c1(b, -b, 0.0), c2(b, b, 0.0), c3(-b, b, 0.0);
  const double base_area = 4.0 * b * b;
  const double side_area = 4.0 * (0.5 * ((c1 - c0).cross(apex - c0)).norm());
  if (rng.uniform() * (base_area + side_area) < base_area) {
    return Vec3(rng.uniform(-b, b), rng.uniform(-b, b), 0.0);
  }
  const Vec3* corners[4] = {&c0, &c1, &c2, &c3};
  const std::size_t f = rng.uniform_index(4);
  return sample_triangle(*corners[f], *corners[(f + 1) % 4], apex, rng);
}

Vec3 sample_ellipsoid(const ShapeParams& p, Rng& rng) {
  const double a = p.a, b = p.b, c = p.c;
  const double gmax = std::max({b * c, a * c, a * b});
  while (true) {
    const Vec3 d = unit_direction(rng);
    const double g = std::sqrt(b * c * d[0] * (b * c * d[0]) +
                               a * c * d[1] * (a * c * d[1]) +
                               a * b * d[2] * (a * b * d[2]));
    if (rng.uniform() * gmax <= g) return Vec3(a * d[0], b * d[1], c * d[2]);
  }
}

// Per-instance shape parameters. Drawn first so the draw count before surface
// sampling is fixed per class.
ShapeParams draw_params(int class_id, Rng& rng) {
  ShapeParams p;
  switch (class_id) {
    case 0:  // sphere
      break;
    case 1:  // box
      p.a = rng.uniform(0.5, 1.0);
      p.b = rng.uniform(0.5, 1.0);
      p.c = rng.uniform(0.5, 1.0);
      break;
    case 2:  // cylinder
      p.a = rng.uniform(0.4, 0.8);
      p.b = rng.uniform(0.6, 1.1);
      break;
    case 3:  // cone
      p.a = rng.uniform(0.5, 0.9);
      p.b = rng.uniform(1.0, 1.8);
      break;
    case 4:  // torus
      p.a = rng.uniform(0.55, 0.75);
      p.b = rng.uniform(0.15, 0.3);
      break;
    case 5:  // capsule
      p.a = rng.uniform(0.35, 0.55);
      p.b = rng.uniform(0.35, 0.8);
      break;
    case 6:  // pyramid
      p.a = rng.uniform(0.5, 0.9);
      p.b = rng.uniform(0.8, 1.5);
      break;
    case 7:  // ellipsoid
      p.a = rng.uniform(0.55, 1.0);
      p.b = rng.uniform(0.55, 1.0);
      p.c = rng.uniform(0.55, 1.0);
      break;
    default:
      throw ArgumentError("unknown primitive class");
  }
  return p;
}

Vec3 sample_surface(int class_id, const ShapeParams& p, Rng& rng) {
  switch (class_id) {
    case 0: return sample_sphere(p, rng);
    case 1: return sample_box(p, rng);
    case 2: return sample_cylinder(p, rng);
    case 3: return sample_cone(p, rng);
    case 4: return sample_torus(p, rng);
    case 5: return sample_capsule(p, rng);
    case 6: return sample_pyramid(p, rng);
    case 7: return sample_ellipsoid(p, rng);
    default: throw ArgumentError("unknown primitive class");
  }
}

PointCloud generate_instance(int class_id, int points, Domain domain,
                             Rng& rng) {
  const ShapeParams shape = draw_params(class_id, rng);
  const Vec3 aspect(rng.uniform(kAspectMin, kAspectMax),
                    rng.uniform(kAspectMin, kAspectMax),
                    rng.uniform(kAspectMin, kAspectMax));
  const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    cloud.points.push_back(
        sample_surface(class_id, shape, rng).cwiseProduct(aspect));
  }
  cloud = geom::rotate_z(cloud, theta);

  if (domain == Domain::target) {
    // half-space view crop: drop the fraction of points facing away from a
    // random view direction
    const Vec3 view = unit_direction(rng);
    const double crop = rng.uniform(kCropMin, kCropMax);
    std::vector<double> dots(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) dots[i] = cloud[i].dot(view);
    std::vector<double> sorted = dots;
    std::sort(sorted.begin(), sorted.end());
    const auto cut = static_cast<std::size_t>(
        std::floor(crop * static_cast<double>(cloud.size())));
    const double threshold = sorted[std::min(cut, cloud.size() - 1)];

    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (dots[i] >= threshold) kept.push_back(i);
    }

    // resample with replacement back to `points`, denser toward the viewpoint
    double dmin = dots[kept.front()], dmax = dots[kept.front()];
    for (std::size_t i : kept) {
      dmin = std::min(dmin, dots[i]);
      dmax = std::max(dmax, dots[i]);
    }
    const double range = std::max(dmax - dmin, 1e-12);
    std::vector<double> cumulative(kept.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      acc += 1.0 + kViewBias * (dots[kept[j]] - dmin) / range;
      cumulative[j] = acc;
    }

    PointCloud resampled;
    resampled.points.reserve(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
      const double u = rng.uniform() * acc;
      const auto it =
          std::upper_bound(cumulative.begin(), cumulative.end(), u);
      const std::size_t j = std::min(
          static_cast<std::size_t>(it - cumulative.begin()), kept.size() - 1);
      resampled.points.push_back(cloud[kept[j]]);
    }
    for (Vec3& q : resampled.points) {
      for (int c = 0; c < 3; ++c) q[c] += rng.normal(0.0, kTargetNoiseSigma);
    }
    cloud = std::move(resampled);
  }

  return geom::normalize_unit_ball(cloud);
}

nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["domain"] = to_string(m.domain);
  j["points"] = m.points;
  j["per_class"] = m.per_class;
  j["classes"] = m.class_names;
  nlohmann::json samples = nlohmann::json::array();
  for (const SampleRecord& r : m.samples) {
    nlohmann::json row;
    row["file"] = r.file;
    if (r.label) {
      row["label"] = *r.label;
    } else {
      row["label"] = nullptr;
    }
    row["domain"] = to_string(r.domain);
    row["split"] = to_string(r.split);
    samples.push_back(std::move(row));
  }
  j["samples"] = std::move(samples);
  return j;
}

}  // namespace

const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {
      "sphere", "box",     "cylinder", "cone",
      "torus",  "capsule", "pyramid",  "ellipsoid"};
  return names;
}

std::string to_string(Domain d) {
  return d == Domain::source ? "source" : "target";
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ArgumentError("unknown domain '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ArgumentError("unknown split '" + s + "'");
}

Manifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) {
    throw ArgumentError("cannot open manifest " + manifest_path.string());
  }
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": bad json: " + e.what(), 0);
  }
  try {
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) {
      throw ArgumentError("unsupported manifest version " +
                          std::to_string(m.version));
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.domain = domain_from_string(j.at("domain").get<std::string>());
    m.points = j.at("points").get<int>();
    m.per_class = j.at("per_class").get<int>();
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    for (const auto& row : j.at("samples")) {
      SampleRecord r;
      r.file = row.at("file").get<std::string>();
      if (!row.at("label").is_null()) {
        const int label = row.at("label").get<int>();
        if (label < 0 || label >= static_cast<int>(m.class_names.size())) {
          throw ArgumentError("manifest label out of range in " + r.file);
        }
        r.label = label;
      }
      r.domain = domain_from_string(row.at("domain").get<std::string>());
      r.split = split_from_string(row.at("split").get<std::string>());
      m.samples.push_back(std::move(r));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": bad schema: " + e.what(), 0);
  }
}

void save_manifest(const std::filesystem::path& manifest_path,
                   const Manifest& manifest) {
  std::ofstream os(manifest_path);
  if (!os) {
    throw ArgumentError("cannot write manifest " + manifest_path.string());
  }
  os << manifest_to_json(manifest).dump(2) << "\n";
}

void generate_benchmark(const std::filesystem::path& out_dir,
                        const GenParams& params) {
  if (params.classes < 2 ||
      params.classes > static_cast<int>(primitive_names().size())) {
    throw ArgumentError("generate_benchmark: classes must lie in [2, 8]");
  }
  if (params.per_class < 20) {
    throw ArgumentError("generate_benchmark: per_class must be >= 20");
  }
  if (params.points < 16) {
    throw ArgumentError("generate_benchmark: points must be >= 16");
  }

  const int test_n = static_cast<int>(
      std::floor(kTestFraction * static_cast<double>(params.per_class)));
  const int train_n = params.per_class - test_n;

  for (const Domain domain : {Domain::source, Domain::target}) {
    const std::filesystem::path dir = out_dir / to_string(domain);
    std::filesystem::create_directories(dir / "clouds");

    Manifest manifest;
    manifest.seed = params.seed;
    manifest.domain = domain;
    manifest.points = params.points;
    manifest.per_class = params.per_class;
    manifest.class_names.assign(primitive_names().begin(),
                                primitive_names().begin() + params.classes);

    const std::uint64_t domain_id = domain == Domain::source ? 0 : 1;
    for (int cls = 0; cls < params.classes; ++cls) {
      for (int inst = 0; inst < params.per_class; ++inst) {
        Rng rng = Rng::derive(params.seed, kTagInstance, domain_id,
                              static_cast<std::uint64_t>(cls) * 1000000u +
                                  static_cast<std::uint64_t>(inst));
        const PointCloud cloud =
            generate_instance(cls, params.points, domain, rng);

        const Split split = inst < train_n ? Split::train : Split::test;
        char name[128];
        std::snprintf(name, sizeof(name), "clouds/%s_%s_%04d.pcl",
                      to_string(split).c_str(),
                      manifest.class_names[static_cast<std::size_t>(cls)].c_str(),
                      inst);
        write_cloud(dir / name, cloud);

        SampleRecord rec;
        rec.file = name;
        rec.label = cls;
        rec.domain = domain;
        rec.split = split;
        manifest.samples.push_back(std::move(rec));
      }
    }
    save_manifest(dir / "manifest.json", manifest);
  }
}

void write_cloud(const std::filesystem::path& path,
                 const geom::PointCloud& cloud) {
  if (cloud.empty()) throw ArgumentError("write_cloud: empty cloud");
  for (const Vec3& p : cloud.points) {
    if (!p.allFinite()) {
      throw ArgumentError("write_cloud: non-finite coordinate");
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot open " + path.string() + " for write");
  os.write(kCloudMagic, sizeof(kCloudMagic));
  binio::write_u32_le(os, static_cast<std::uint32_t>(cloud.size()));
  for (const Vec3& p : cloud.points) {
    for (int c = 0; c < 3; ++c) {
      binio::write_f32_le(os, static_cast<float>(p[c]));
    }
  }
  if (!os) throw ArgumentError("write failed for " + path.string());
}

geom::PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("cannot open " + path.string());

  char magic[4];
  if (!binio::read_exact(is, magic, sizeof(magic))) {
    throw FormatError(path.string() + ": file too short for magic", 0);
  }
  if (std::memcmp(magic, kCloudMagic, sizeof(kCloudMagic)) != 0) {
    throw FormatError(path.string() + ": bad magic, expected 'PCL1'", 0);
  }
  std::uint32_t count = 0;
  if (!binio::read_u32_le(is, count)) {
    throw FormatError(path.string() + ": truncated point count", 4);
  }
  if (count == 0) {
    throw FormatError(path.string() + ": point count must be positive", 4);
  }

  PointCloud cloud;
  cloud.points.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (int c = 0; c < 3; ++c) {
      float v = 0.0f;
      if (!binio::read_f32_le(is, v)) {
        throw FormatError(
            path.string() + ": payload truncated, declared " +
                std::to_string(count) + " points",
            8 + (static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)) * 4);
      }
      cloud.points[i][c] = static_cast<double>(v);
    }
  }
  char extra;
  if (is.read(&extra, 1).gcount() != 0) {
    throw FormatError(path.string() + ": payload larger than declared count",
                      8 + static_cast<std::size_t>(count) * 12);
  }
  return cloud;
}

geom::PointCloud downsample(const geom::PointCloud& cloud, std::size_t n,
                            Rng& rng) {
  const std::size_t m = cloud.size();
  if (n < 1 || n > m) {
    throw ArgumentError("downsample: need 1 <= n <= point count");
  }
  // selection sampling: uniform without replacement, order preserved
  PointCloud out;
  out.points.reserve(n);
  std::size_t needed = n;
  for (std::size_t i = 0; i < m && needed > 0; ++i) {
    const std::size_t pool = m - i;
    if (rng.uniform() * static_cast<double>(pool) <
        static_cast<double>(needed)) {
      out.points.push_back(cloud[i]);
      --needed;
    }
  }
  return out;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const Manifest manifest = load_manifest(dir / "manifest.json");
  LoadedDataset ds;
  ds.domain = manifest.domain;
  ds.class_names = manifest.class_names;
  ds.clouds.reserve(manifest.samples.size());
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const SampleRecord& rec = manifest.samples[i];
    ds.clouds.push_back(geom::normalize_unit_ball(read_cloud(dir / rec.file)));
    ds.labels.push_back(rec.label.value_or(-1));
    ds.splits.push_back(rec.split);
    if (rec.split == Split::train) {
      ds.train_indices.push_back(i);
    } else {
      ds.test_indices.push_back(i);
    }
  }
  return ds;
}

}  // namespace geoadapt::dataset
