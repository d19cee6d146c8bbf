#include "volfit/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace volfit {

namespace {

using nlohmann::json;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quoted(const std::string& s) { return json(s).dump(); }

std::string num_list(const double* v, int n) {
  std::string out = "[";
  for (int i = 0; i < n; ++i) out += (i ? ", " : "") + num(v[i]);
  return out + "]";
}

template <typename J>
const J& field(const J& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(where + ": missing '" + key + "'");
  return *it;
}

std::vector<double> numbers(const json& j, std::size_t n, const std::string& where) {
  if (!j.is_array() || j.size() != n) throw FormatError(where + ": expected " + std::to_string(n) + " numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw FormatError(where + ": expected a number");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

int Rig::find(const std::string& name) const {
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (cameras[i].camera.id == name) return static_cast<int>(i);
  throw FormatError("no camera named '" + name + "' in rig");
}

std::string rig_to_json(const Rig& rig) {
  std::ostringstream out;
  out << "{\n  \"frames\": " << rig.frames << ",\n";
  out << "  \"bounds\": {\"center\": " << num_list(rig.bounds.center.data(), 3) << ", \"side\": " << num(rig.bounds.side)
      << "},\n";
  if (!rig.conditioning.empty()) {
    out << "  \"conditioning\": [";
    for (std::size_t f = 0; f < rig.conditioning.size(); ++f)
      out << (f ? ", " : "") << num_list(rig.conditioning[f].data(), static_cast<int>(rig.conditioning[f].size()));
    out << "],\n";
  }
  if (!rig.encoder_cameras.empty()) {
    out << "  \"encoder_cameras\": [";
    for (std::size_t i = 0; i < rig.encoder_cameras.size(); ++i) out << (i ? ", " : "") << quoted(rig.encoder_cameras[i]);
    out << "],\n";
  }
  out << "  \"cameras\": [";
  for (std::size_t i = 0; i < rig.cameras.size(); ++i) {
    const RigCamera& rc = rig.cameras[i];
    const Camera<double>& c = rc.camera;
    Eigen::Matrix<double, 3, 3, Eigen::RowMajor> k = c.intrinsics;
    Eigen::Matrix<double, 3, 4, Eigen::RowMajor> e = c.extrinsics;
    out << (i ? ",\n" : "\n") << "    {\n";
    out << "      \"name\": " << quoted(c.id) << ",\n";
    out << "      \"intrinsics\": " << num_list(k.data(), 9) << ",\n";
    out << "      \"extrinsics\": " << num_list(e.data(), 12) << ",\n";
    out << "      \"width\": " << c.width << ",\n      \"height\": " << c.height << ",\n";
    if (c.gain != Vec3<double>::Ones()) out << "      \"gain\": " << num_list(c.gain.data(), 3) << ",\n";
    if (c.bias != Vec3<double>::Zero()) out << "      \"bias\": " << num_list(c.bias.data(), 3) << ",\n";
    out << "      \"images\": [";
    for (std::size_t f = 0; f < rc.images.size(); ++f) out << (f ? ", " : "") << quoted(rc.images[f]);
    out << "]";
    if (!rc.background.empty()) out << ",\n      \"background\": " << quoted(rc.background);
    if (rc.holdout) out << ",\n      \"holdout\": true";
    out << "\n    }";
  }
  out << "\n  ]\n}\n";
  return out.str();
}

Rig rig_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("rig file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("rig file must hold a JSON object");
  static const std::vector<std::string> top_keys = {"frames", "bounds", "conditioning", "encoder_cameras", "cameras"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (std::find(top_keys.begin(), top_keys.end(), it.key()) == top_keys.end())
      throw FormatError("rig: unknown key '" + it.key() + "'");

  Rig rig;
  rig.frames = doc.value("frames", 1);
  if (rig.frames < 1) throw FormatError("rig: frames must be >= 1");
  if (doc.contains("bounds")) {
    const auto& b = doc["bounds"];
    const auto c = numbers(field(b, "center", std::string("rig bounds")), 3, "rig bounds center");
    rig.bounds.center = Vec3<double>(c[0], c[1], c[2]);
    rig.bounds.side = field(b, "side", std::string("rig bounds")).get<double>();
    if (!(rig.bounds.side > 0)) throw FormatError("rig: bounds side must be positive");
  }
  if (doc.contains("conditioning")) {
    for (const auto& row : doc["conditioning"]) rig.conditioning.push_back(numbers(row, row.size(), "rig conditioning"));
    if (static_cast<int>(rig.conditioning.size()) != rig.frames)
      throw FormatError("rig: conditioning needs one vector per frame");
  }
  if (doc.contains("encoder_cameras"))
    for (const auto& n : doc["encoder_cameras"]) rig.encoder_cameras.push_back(n.get<std::string>());

  for (const auto& jc : field(doc, "cameras", std::string("rig"))) {
    RigCamera rc;
    Camera<double>& c = rc.camera;
    c.id = field(jc, "name", std::string("rig camera")).get<std::string>();
    const std::string where = "rig camera '" + c.id + "'";
    const auto k = numbers(field(jc, "intrinsics", where), 9, where + " intrinsics");
    const auto e = numbers(field(jc, "extrinsics", where), 12, where + " extrinsics");
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) c.intrinsics(r, col) = k[r * 3 + col];
      for (int col = 0; col < 4; ++col) c.extrinsics(r, col) = e[r * 4 + col];
    }
    c.width = field(jc, "width", where).get<int>();
    c.height = field(jc, "height", where).get<int>();
    for (const auto& p : field(jc, "images", where)) rc.images.push_back(p.get<std::string>());
    if (static_cast<int>(rc.images.size()) != rig.frames)
      throw FormatError(where + ": expected " + std::to_string(rig.frames) + " image paths");
    if (jc.contains("gain")) {
      const auto g = numbers(jc["gain"], 3, where + " gain");
      c.gain = Vec3<double>(g[0], g[1], g[2]);
    }
    if (jc.contains("bias")) {
      const auto b = numbers(jc["bias"], 3, where + " bias");
      c.bias = Vec3<double>(b[0], b[1], b[2]);
    }
    rc.background = jc.value("background", std::string());
    rc.holdout = jc.value("holdout", false);
    c.validate();
    rig.cameras.push_back(std::move(rc));
  }
  return rig;
}

void write_rig(const std::filesystem::path& path, const Rig& rig) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << rig_to_json(rig);
}

Rig read_rig(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open rig file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return rig_from_json(ss.str());
}

std::vector<int> Dataset::train_cameras() const {
  std::vector<int> out;
  for (int i = 0; i < cameras(); ++i)
    if (!rig.cameras[i].holdout) out.push_back(i);
  return out;
}

std::vector<int> Dataset::holdout_cameras() const {
  std::vector<int> out;
  for (int i = 0; i < cameras(); ++i)
    if (rig.cameras[i].holdout) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (static_cast<int>(images.size()) != cameras()) throw FormatError("dataset: image table does not match rig");
  for (int c = 0; c < cameras(); ++c) {
    const Camera<double>& cam = rig.cameras[c].camera;
    if (static_cast<int>(images[c].size()) != frames())
      throw FormatError("dataset: camera '" + cam.id + "' does not have one image per frame");
    for (const auto& img : images[c])
      if (img.width() != cam.width || img.height() != cam.height || img.channels() != 3)
        throw FormatError("dataset: image of camera '" + cam.id + "' does not match its resolution");
    if (c < static_cast<int>(backgrounds.size()) && backgrounds[c] &&
        (backgrounds[c]->width() != cam.width || backgrounds[c]->height() != cam.height))
      throw FormatError("dataset: background of camera '" + cam.id + "' does not match its resolution");
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.root = dir;
  d.rig = read_rig(dir / "rig.json");
  for (const auto& rc : d.rig.cameras) {
    std::vector<Image<float>> frames;
    for (const auto& p : rc.images) {
      Image<float> img = read_image(dir / p);
      if (img.channels() != 3) throw FormatError(p + ": expected an RGB image");
      frames.push_back(std::move(img));
    }
    d.images.push_back(std::move(frames));
    if (rc.background.empty())
      d.backgrounds.emplace_back();
    else
      d.backgrounds.emplace_back(read_image(dir / rc.background));
  }
  d.validate();
  return d;
}

void save_dataset(const std::filesystem::path& dir, Dataset& data) {
  data.validate();
  std::filesystem::create_directories(dir / "images");
  for (int c = 0; c < data.cameras(); ++c) {
    RigCamera& rc = data.rig.cameras[c];
    rc.images.clear();
    for (int f = 0; f < data.frames(); ++f) {
      char stem[160];
      std::snprintf(stem, sizeof stem, "images/%s_f%03d", rc.camera.id.c_str(), f);
      write_f32img(dir / (std::string(stem) + ".f32img"), data.images[c][f]);
      write_png(dir / (std::string(stem) + ".png"), data.images[c][f]);
      rc.images.push_back(std::string(stem) + ".f32img");
    }
    rc.background.clear();
    if (c < static_cast<int>(data.backgrounds.size()) && data.backgrounds[c]) {
      const std::string stem = "images/" + rc.camera.id + "_bg";
      write_f32img(dir / (stem + ".f32img"), *data.backgrounds[c]);
      write_png(dir / (stem + ".png"), *data.backgrounds[c]);
      rc.background = stem + ".f32img";
    }
  }
  write_rig(dir / "rig.json", data.rig);
  data.root = dir;
}

Image<float> median_image(const std::vector<const Image<float>*>& images) {
  if (images.empty()) throw ShapeError("median_image needs at least one image");
  const Image<float>& first = *images.front();
  Image<float> out(first.width(), first.height(), first.channels());
  std::vector<float> vals(images.size());
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    for (std::size_t k = 0; k < images.size(); ++k) {
      if (images[k]->data().size() != out.data().size()) throw ShapeError("median_image: sizes differ");
      vals[k] = images[k]->data()[i];
    }
    const std::size_t mid = (vals.size() - 1) / 2;
    std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
    out.data()[i] = vals[mid];
  }
  return out;
}

}  // namespace volfit
