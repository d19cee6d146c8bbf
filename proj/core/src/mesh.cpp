#include "volfit/mesh.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace volfit {

namespace {

int resolve_index(const std::string& token, int vertex_count, const std::string& where) {
  const std::string head = token.substr(0, token.find('/'));
  int idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw FormatError(where + ": bad face index '" + token + "'");
  }
  if (idx > 0) return idx - 1;
  if (idx < 0) return vertex_count + idx;
  throw FormatError(where + ": face index 0 is invalid");
}

}  // namespace

TriMesh<double> read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open mesh '" + path.string() + "'");
  TriMesh<double> mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::vector<double> vals;
      double x;
      while (ss >> x) vals.push_back(x);
      if (vals.size() != 3 && vals.size() != 6) throw FormatError(where + ": vertex needs 3 or 6 numbers");
      mesh.vertices.emplace_back(vals[0], vals[1], vals[2]);
      mesh.colors.push_back(vals.size() == 6 ? Vec3<double>(vals[3], vals[4], vals[5]) : Vec3<double>::Ones());
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(resolve_index(tok, static_cast<int>(mesh.vertices.size()), where));
      if (idx.size() < 3) throw FormatError(where + ": face needs at least 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
    // Other OBJ statements (vt, vn, o, g, s, usemtl...) are ignored.
  }
  mesh.validate();
  return mesh;
}

void write_obj(const std::filesystem::path& path, const TriMesh<double>& mesh) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write mesh '" + path.string() + "'");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    const auto& c = mesh.colors[i];
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << ' ' << c.x() << ' ' << c.y() << ' ' << c.z() << '\n';
  }
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

}  // namespace volfit
