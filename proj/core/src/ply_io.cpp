#include "fsp/ply_io.hpp"

#include <sstream>
#include <vector>

#include "fsp/fsio.hpp"

namespace fsp {
namespace {

std::vector<std::string> property_names(int sh_degree) {
    std::vector<std::string> names = {"x",       "y",       "z",       "rot_0",  "rot_1",
                                      "rot_2",   "rot_3",   "scale_0", "scale_1", "scale_2",
                                      "opacity", "f_dc_0",  "f_dc_1",  "f_dc_2"};
    if (sh_degree == 1)
        for (int i = 0; i < 9; ++i) names.push_back("f_rest_" + std::to_string(i));
    return names;
}

void append_gaussian(std::string& out, const Gaussian3& g) {
    bin::put_f64(out, g.center.x);
    bin::put_f64(out, g.center.y);
    bin::put_f64(out, g.center.z);
    bin::put_f64(out, g.rotation.w);
    bin::put_f64(out, g.rotation.x);
    bin::put_f64(out, g.rotation.y);
    bin::put_f64(out, g.rotation.z);
    bin::put_f64(out, g.log_scale.x);
    bin::put_f64(out, g.log_scale.y);
    bin::put_f64(out, g.log_scale.z);
    bin::put_f64(out, g.opacity_logit);
    bin::put_f64(out, g.sh[0].x);
    bin::put_f64(out, g.sh[0].y);
    bin::put_f64(out, g.sh[0].z);
    if (g.sh.size() == 4)
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 3; ++k) bin::put_f64(out, g.sh[size_t(k + 1)][c]);
}

}  // namespace

std::string encode_cloud(const GaussianCloud& cloud) {
    if (cloud.empty()) throw FormatError("encode_cloud: empty cloud");
    const int degree = cloud.gaussians[0].sh_degree();
    for (const Gaussian3& g : cloud.gaussians)
        if (g.sh_degree() != degree)
            throw FormatError("encode_cloud: mixed SH degrees cannot be stored");

    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\n"
           << "element vertex " << cloud.size() << '\n';
    for (const std::string& name : property_names(degree))
        header << "property double " << name << '\n';
    header << "end_header\n";

    std::string out = header.str();
    for (const Gaussian3& g : cloud.gaussians) append_gaussian(out, g);
    return out;
}

GaussianCloud decode_cloud(std::string_view bytes) {
    size_t header_end = bytes.find("end_header\n");
    if (header_end == std::string_view::npos) throw FormatError("ply: missing end_header");
    std::istringstream header(std::string(bytes.substr(0, header_end)));

    std::string line;
    if (!std::getline(header, line) || line != "ply") throw FormatError("ply: bad magic line");
    if (!std::getline(header, line) || line != "format binary_little_endian 1.0")
        throw FormatError("ply: unsupported format (need binary_little_endian 1.0)");

    size_t count = 0;
    bool have_vertex = false;
    std::vector<std::string> props;
    while (std::getline(header, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string what;
            ls >> what >> count;
            if (what != "vertex" || have_vertex)
                throw FormatError("ply: expected a single vertex element");
            have_vertex = true;
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (!have_vertex) throw FormatError("ply: property before vertex element");
            if (type != "double") throw FormatError("ply: property " + name + " must be double");
            props.push_back(name);
        } else if (!word.empty()) {
            throw FormatError("ply: unexpected header line: " + line);
        }
    }
    if (!have_vertex) throw FormatError("ply: missing vertex element");

    int degree;
    if (props == property_names(0)) degree = 0;
    else if (props == property_names(1)) degree = 1;
    else {
        // Name the first divergence so broken exports are easy to diagnose.
        const std::vector<std::string> want = property_names(props.size() > 14 ? 1 : 0);
        for (size_t i = 0; i < want.size(); ++i)
            if (i >= props.size() || props[i] != want[i])
                throw FormatError("ply: missing or misplaced property " + want[i]);
        throw FormatError("ply: unexpected extra properties");
    }

    bin::Reader in(bytes.substr(header_end + 11), "ply");
    GaussianCloud cloud;
    cloud.gaussians.resize(count);
    for (Gaussian3& g : cloud.gaussians) {
        g.center = {in.f64(), in.f64(), in.f64()};
        g.rotation = {in.f64(), in.f64(), in.f64(), in.f64()};
        g.log_scale = {in.f64(), in.f64(), in.f64()};
        g.opacity_logit = in.f64();
        g.sh.assign(degree == 0 ? 1 : 4, Vec3d{});
        g.sh[0] = {in.f64(), in.f64(), in.f64()};
        if (degree == 1)
            for (int c = 0; c < 3; ++c)
                for (int k = 0; k < 3; ++k) g.sh[size_t(k + 1)][c] = in.f64();
    }
    if (!in.done()) throw FormatError("ply: trailing bytes");
    cloud.dynamic_flags.assign(count, 0);
    return cloud;
}

void save_cloud(const std::filesystem::path& path, const GaussianCloud& cloud) {
    write_file_atomic(path, encode_cloud(cloud));
}

GaussianCloud load_cloud(const std::filesystem::path& path) {
    return decode_cloud(read_file_bytes(path));
}

}  // namespace fsp
