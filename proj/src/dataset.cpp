#include "ovd/dataset.hpp"

#include <sstream>

#include "ovd/errors.hpp"
#include "ovd/io.hpp"

namespace ovd {
namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ostringstream os;
    os << "# image_id\tsource\twidth\theight\tboxes\n";
    for (const ImageRecord& r : m.records) {
        os << r.id << '\t' << r.source << '\t' << r.width << '\t' << r.height << '\t';
        for (std::size_t i = 0; i < r.annotations.size(); ++i) {
            const Annotation& a = r.annotations[i];
            if (i) os << ';';
            os << format_double(a.box.x1) << ',' << format_double(a.box.y1) << ','
               << format_double(a.box.x2) << ',' << format_double(a.box.y2) << ',' << a.category_id;
        }
        os << '\n';
    }
    write_text_file(path, os.str());
}

DatasetManifest load_manifest(const std::string& path) {
    DatasetManifest m;
    std::istringstream is(read_text_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const std::vector<std::string> cols = split_on(line, '\t');
        if (cols.size() != 5) {
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields");
        }
        ImageRecord r;
        try {
            r.id = std::stoi(cols[0]);
            r.source = cols[1];
            r.width = std::stoi(cols[2]);
            r.height = std::stoi(cols[3]);
            if (!cols[4].empty()) {
                for (const std::string& item : split_on(cols[4], ';')) {
                    const std::vector<std::string> f = split_on(item, ',');
                    if (f.size() != 5) throw IoError("expected x1,y1,x2,y2,cat");
                    Annotation a;
                    a.box = Box{std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])};
                    a.category_id = std::stoi(f[4]);
                    if (!a.box.valid()) throw IoError("degenerate annotation box");
                    r.annotations.push_back(a);
                }
            }
        } catch (const IoError&) {
            throw;
        } catch (const std::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (r.width < 16 || r.height < 16) {
            throw IoError(path + ":" + std::to_string(lineno) + ": image smaller than 16px");
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

}  // namespace ovd
