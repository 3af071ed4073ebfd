#pragma once

#include <string>
#include <vector>

#include "ovd/geometry.hpp"

namespace ovd {

struct Annotation {
    Box box;
    int category_id = 0;
};

// One dataset entry. `source` is a self-contained synthetic drawing program
// (see synth_image.hpp); pixels are rendered on demand so manifests stay
// small text files that pipeline stages can pass between processes.
struct ImageRecord {
    int id = 0;
    int width = 0;
    int height = 0;
    std::string source;
    std::vector<Annotation> annotations;
};

struct DatasetManifest {
    std::vector<ImageRecord> records;

    bool empty() const { return records.empty(); }
    std::size_t size() const { return records.size(); }
};

// Line format: image_id<TAB>source<TAB>W<TAB>H<TAB>boxes where boxes is
// `x1,y1,x2,y2,cat;...` (empty for images without annotations).
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace ovd
