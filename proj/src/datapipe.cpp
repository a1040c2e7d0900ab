#include "stylesiam/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "stylesiam/exceptions.hpp"
#include "stylesiam/netpbm.hpp"
#include "stylesiam/rng.hpp"

namespace fs = std::filesystem;

namespace stylesiam {

using nlohmann::json;

const char* category_name(Category c) { return c == Category::typeA ? "typeA" : "typeB"; }

Category category_from_name(const std::string& name) {
    if (name == "typeA") return Category::typeA;
    if (name == "typeB") return Category::typeB;
    throw data_error("unknown category \"" + name + "\" (expected typeA or typeB)");
}

std::vector<ItemRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open manifest: " + path);

    std::vector<ItemRecord> records;
    std::set<std::string> seen_ids;
    // outfit -> categories already taken
    std::map<std::string, std::set<std::string>> outfit_cats;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw data_error("manifest parse error at line " + std::to_string(line_no) + ": " + e.what());
        }
        static const std::set<std::string> fields = {"item_id", "outfit_id", "category",
                                                     "image_path", "mask_path"};
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!fields.count(it.key())) {
                throw data_error("manifest line " + std::to_string(line_no) + ": unknown field \"" +
                                 it.key() + "\"");
            }
        }
        for (const auto& f : fields) {
            if (!j.contains(f) || !j.at(f).is_string()) {
                throw data_error("manifest line " + std::to_string(line_no) + ": missing field \"" + f + "\"");
            }
        }
        ItemRecord rec;
        rec.item_id = j.at("item_id").get<std::string>();
        rec.outfit_id = j.at("outfit_id").get<std::string>();
        rec.category = category_from_name(j.at("category").get<std::string>());
        rec.image_path = j.at("image_path").get<std::string>();
        rec.mask_path = j.at("mask_path").get<std::string>();

        if (!seen_ids.insert(rec.item_id).second) {
            throw data_error("manifest line " + std::to_string(line_no) + ": duplicate item_id \"" +
                             rec.item_id + "\"");
        }
        if (!outfit_cats[rec.outfit_id].insert(category_name(rec.category)).second) {
            throw data_error("manifest validation: outfit \"" + rec.outfit_id +
                             "\" has more than one " + category_name(rec.category) + " item");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

TensorPtr apply_mask(const Tensor& image, const Tensor& mask) {
    if (image.shape.size() != 3 || mask.shape.size() != 3 || mask.shape[0] != 1 ||
        image.shape[1] != mask.shape[1] || image.shape[2] != mask.shape[2]) {
        throw dim_error("apply_mask expects image [C,H,W] and mask [1,H,W] with matching spatial dims, got " +
                        shape_str(image.shape) + " and " + shape_str(mask.shape));
    }
    const int ch = image.shape[0];
    const int plane = image.shape[1] * image.shape[2];
    auto out = make_tensor(image.shape);
    for (int c = 0; c < ch; ++c) {
        for (int i = 0; i < plane; ++i) {
            out->data[static_cast<size_t>(c) * plane + i] =
                image.data[static_cast<size_t>(c) * plane + i] * mask.data[i];
        }
    }
    return out;
}

std::map<std::string, std::array<std::string, 2>> complete_outfits(
    const std::vector<ItemRecord>& records) {
    std::map<std::string, std::array<std::string, 2>> by_outfit;
    std::map<std::string, std::set<int>> filled;
    for (const auto& r : records) {
        const int slot = r.category == Category::typeA ? 0 : 1;
        by_outfit[r.outfit_id][slot] = r.item_id;
        filled[r.outfit_id].insert(slot);
    }
    std::map<std::string, std::array<std::string, 2>> out;
    for (const auto& [outfit, slots] : filled) {
        if (slots.size() == 2) out[outfit] = by_outfit[outfit];
    }
    return out;
}

std::vector<Triplet> build_triplets(const std::vector<ItemRecord>& records,
                                    const std::set<std::string>& outfit_pool, int count,
                                    uint32_t seed) {
    if (count <= 0) throw contract_error("build_triplets count must be positive");
    const auto all = complete_outfits(records);
    std::vector<std::pair<std::string, std::array<std::string, 2>>> pool;
    for (const auto& [outfit, items] : all) {
        if (outfit_pool.count(outfit)) pool.emplace_back(outfit, items);
    }
    if (pool.size() < 2) {
        throw data_error("build_triplets needs at least 2 complete outfits in the pool, have " +
                         std::to_string(pool.size()));
    }

    Rng rng(seed);
    std::vector<Triplet> triplets;
    triplets.reserve(count);
    const uint32_t n = static_cast<uint32_t>(pool.size());
    for (int i = 0; i < count; ++i) {
        const bool anchor_is_a = i % 2 == 0;
        const uint32_t anchor_idx = rng.below(n);
        uint32_t other_idx = rng.below(n - 1);
        if (other_idx >= anchor_idx) ++other_idx;
        const auto& anchor_outfit = pool[anchor_idx].second;
        const auto& other_outfit = pool[other_idx].second;
        Triplet t;
        t.anchor = anchor_is_a ? anchor_outfit[0] : anchor_outfit[1];
        t.positive = anchor_is_a ? anchor_outfit[1] : anchor_outfit[0];
        t.negative = anchor_is_a ? other_outfit[1] : other_outfit[0];
        triplets.push_back(std::move(t));
    }
    return triplets;
}

std::vector<FoldSplit> kfold_split(std::vector<std::string> outfit_ids, int k, uint32_t seed) {
    if (k < 2) throw config_error("kfold_split requires k >= 2, got " + std::to_string(k));
    if (static_cast<int>(outfit_ids.size()) < k) {
        throw data_error("kfold_split: " + std::to_string(outfit_ids.size()) + " outfits cannot fill " +
                         std::to_string(k) + " folds");
    }
    Rng rng(seed);
    for (size_t i = outfit_ids.size() - 1; i > 0; --i) {
        const size_t j = rng.below(static_cast<uint32_t>(i + 1));
        std::swap(outfit_ids[i], outfit_ids[j]);
    }
    const int n = static_cast<int>(outfit_ids.size());
    const int base = n / k;
    const int extra = n % k;
    std::vector<FoldSplit> folds;
    int pos = 0;
    for (int f = 0; f < k; ++f) {
        const int size = base + (f < extra ? 1 : 0);
        FoldSplit split;
        split.fold_index = f;
        split.test_outfits.assign(outfit_ids.begin() + pos, outfit_ids.begin() + pos + size);
        split.train_outfits.reserve(n - size);
        split.train_outfits.assign(outfit_ids.begin(), outfit_ids.begin() + pos);
        split.train_outfits.insert(split.train_outfits.end(), outfit_ids.begin() + pos + size,
                                   outfit_ids.end());
        folds.push_back(std::move(split));
        pos += size;
    }
    return folds;
}

namespace {

struct Color {
    float r, g, b;
};

// Item colors carry only mild variation: compatibility lives in the texture
// statistics, so the low-level signal must not be drowned in color variance.
Color random_color(Rng& rng, float lum_lo, float lum_hi) {
    const float base = rng.uniform(lum_lo, lum_hi);
    auto jitter = [&](float v) { return std::clamp(v + rng.uniform(-0.03f, 0.03f), 0.0f, 1.0f); };
    return {jitter(base), jitter(base), jitter(base)};
}

enum class TextureKind { stripes, checker, dots };

struct FamilyStyle {
    TextureKind kind;
    float parameter;  // band center: stripe frequency, checker cell, dot radius
};

FamilyStyle family_style(int family, int n_families, int image_size) {
    const float t = n_families <= 1 ? 0.0f : static_cast<float>(family) / (n_families - 1);
    FamilyStyle s;
    s.kind = static_cast<TextureKind>(family % 3);
    switch (s.kind) {
        case TextureKind::stripes:
            s.parameter = 3.0f + t * (image_size / 4.0f - 3.0f);  // cycles per image
            break;
        case TextureKind::checker:
            s.parameter = 2.0f + t * (image_size / 8.0f - 2.0f);  // cell size, px
            break;
        case TextureKind::dots:
            s.parameter = 1.5f + t * 3.0f;  // dot radius, px
            break;
    }
    return s;
}

// silhouettes: typeA a skirt-like trapezoid, typeB a t-shirt-like T shape
TensorPtr make_silhouette(Category cat, int size, Rng& rng) {
    auto mask = make_tensor({1, size, size});
    const float cx = 0.5f + rng.uniform(-0.05f, 0.05f);
    const float scale = rng.uniform(0.75f, 0.95f);
    if (cat == Category::typeA) {
        const float top = 0.5f - 0.38f * scale;
        const float bottom = 0.5f + 0.42f * scale;
        const float w_top = 0.18f * scale;
        const float w_bottom = 0.42f * scale;
        for (int y = 0; y < size; ++y) {
            const float fy = (y + 0.5f) / size;
            if (fy < top || fy > bottom) continue;
            const float u = (fy - top) / (bottom - top);
            const float half = w_top + u * (w_bottom - w_top);
            for (int x = 0; x < size; ++x) {
                const float fx = (x + 0.5f) / size;
                if (std::fabs(fx - cx) <= half) mask->data[static_cast<size_t>(y) * size + x] = 1.0f;
            }
        }
    } else {
        const float torso_half = 0.22f * scale;
        const float torso_top = 0.5f - 0.35f * scale;
        const float torso_bottom = 0.5f + 0.38f * scale;
        const float sleeve_half = 0.42f * scale;
        const float sleeve_bottom = torso_top + 0.28f * scale;
        for (int y = 0; y < size; ++y) {
            const float fy = (y + 0.5f) / size;
            for (int x = 0; x < size; ++x) {
                const float fx = (x + 0.5f) / size;
                const bool torso = fy >= torso_top && fy <= torso_bottom && std::fabs(fx - cx) <= torso_half;
                const bool sleeves = fy >= torso_top && fy <= sleeve_bottom && std::fabs(fx - cx) <= sleeve_half;
                if (torso || sleeves) mask->data[static_cast<size_t>(y) * size + x] = 1.0f;
            }
        }
    }
    return mask;
}

float texture_intensity(TextureKind kind, float param, float phase, int x, int y, int size,
                        const std::vector<std::pair<float, float>>& dot_centers) {
    switch (kind) {
        case TextureKind::stripes: {
            const float fx = (x + 0.5f) / size;
            return 0.5f + 0.5f * std::sin(2.0f * 3.14159265358979f * param * fx + phase);
        }
        case TextureKind::checker: {
            const int cell = std::max(2, static_cast<int>(std::lround(param)));
            return ((x / cell) + (y / cell)) % 2 == 0 ? 1.0f : 0.0f;
        }
        case TextureKind::dots: {
            for (const auto& [dx, dy] : dot_centers) {
                const float ddx = x - dx;
                const float ddy = y - dy;
                if (ddx * ddx + ddy * ddy <= param * param) return 1.0f;
            }
            return 0.0f;
        }
    }
    return 0.0f;
}

}  // namespace

std::string generate_synthetic(const std::string& out_dir, int n_outfits, int image_size,
                               int n_style_families, uint32_t seed) {
    if (n_outfits <= 0) throw contract_error("generate_synthetic needs n_outfits >= 1");
    if (image_size < 32) throw contract_error("generate_synthetic needs image_size >= 32");
    if (n_style_families < 2) throw contract_error("generate_synthetic needs n_style_families >= 2");

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "masks", ec);
    if (ec) throw io_error("cannot create output directories under " + out_dir);

    Rng rng(seed);
    std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw io_error("cannot write manifest under " + out_dir);

    for (int o = 0; o < n_outfits; ++o) {
        const int family = static_cast<int>(rng.below(static_cast<uint32_t>(n_style_families)));
        const auto style = family_style(family, n_style_families, image_size);
        // the style parameter is drawn once per outfit within the family band
        const float param = style.parameter * rng.uniform(0.9f, 1.1f);

        char outfit_id[32];
        std::snprintf(outfit_id, sizeof(outfit_id), "outfit%04d_fam%d", o, family);

        for (int side = 0; side < 2; ++side) {
            const Category cat = side == 0 ? Category::typeA : Category::typeB;
            const std::string item_id = std::string(outfit_id) + (side == 0 ? "_a" : "_b");

            const Color bg = random_color(rng, 0.12f, 0.28f);
            const Color fg = random_color(rng, 0.72f, 0.88f);
            const Color scene = {rng.uniform(0.2f, 0.8f), rng.uniform(0.2f, 0.8f), rng.uniform(0.2f, 0.8f)};
            const float phase = rng.uniform(0.0f, 6.28318f);

            std::vector<std::pair<float, float>> dots;
            if (style.kind == TextureKind::dots) {
                const float density = 0.10f;
                const int n_dots = std::max(
                    4, static_cast<int>(density * image_size * image_size / (3.14159f * param * param)));
                for (int d = 0; d < n_dots; ++d) {
                    dots.emplace_back(rng.uniform(0.0f, static_cast<float>(image_size)),
                                      rng.uniform(0.0f, static_cast<float>(image_size)));
                }
            }

            auto mask = make_silhouette(cat, image_size, rng);
            auto image = make_tensor({3, image_size, image_size});
            const int plane = image_size * image_size;
            for (int y = 0; y < image_size; ++y) {
                for (int x = 0; x < image_size; ++x) {
                    const size_t pix = static_cast<size_t>(y) * image_size + x;
                    float r, g, b;
                    if (mask->data[pix] > 0.5f) {
                        const float t = texture_intensity(style.kind, param, phase, x, y, image_size, dots);
                        r = bg.r + (fg.r - bg.r) * t;
                        g = bg.g + (fg.g - bg.g) * t;
                        b = bg.b + (fg.b - bg.b) * t;
                    } else {
                        r = scene.r;
                        g = scene.g;
                        b = scene.b;
                    }
                    image->data[pix] = r;
                    image->data[plane + pix] = g;
                    image->data[2 * plane + pix] = b;
                }
            }

            const std::string image_rel = "images/" + item_id + ".ppm";
            const std::string mask_rel = "masks/" + item_id + ".pgm";
            write_ppm((fs::path(out_dir) / image_rel).string(), *image);
            write_pgm((fs::path(out_dir) / mask_rel).string(), *mask);

            json line;
            line["item_id"] = item_id;
            line["outfit_id"] = outfit_id;
            line["category"] = category_name(cat);
            line["image_path"] = image_rel;
            line["mask_path"] = mask_rel;
            manifest << line.dump() << "\n";
        }
    }
    manifest.close();
    if (!manifest) throw io_error("short write on manifest under " + out_dir);
    return (fs::path(out_dir) / "manifest.jsonl").string();
}

ImageStore::ImageStore(std::vector<ItemRecord> records, std::array<int, 3> input_shape,
                       std::string base_dir)
    : records_(std::move(records)), input_shape_(input_shape), base_dir_(std::move(base_dir)) {
    if (input_shape_[0] != 3) {
        throw config_error("image store: model input must have 3 channels for PPM images");
    }
    for (size_t i = 0; i < records_.size(); ++i) {
        index_[records_[i].item_id] = i;
    }
}

const ItemRecord& ImageStore::record(const std::string& item_id) const {
    auto it = index_.find(item_id);
    if (it == index_.end()) throw data_error("unknown item_id \"" + item_id + "\"");
    return records_[it->second];
}

TensorPtr ImageStore::image(const std::string& item_id) {
    auto cached = cache_.find(item_id);
    if (cached != cache_.end()) return cached->second;

    const auto& rec = record(item_id);
    auto resolve = [this](const std::string& p) {
        fs::path path(p);
        if (path.is_absolute() || base_dir_.empty()) return p;
        return (fs::path(base_dir_) / path).string();
    };
    auto img = read_ppm(resolve(rec.image_path));
    auto mask = read_pgm(resolve(rec.mask_path));
    if (img->shape[1] != mask->shape[1] || img->shape[2] != mask->shape[2]) {
        throw data_error("item \"" + item_id + "\": image and mask dimensions differ (" +
                         shape_str(img->shape) + " vs " + shape_str(mask->shape) + ")");
    }
    // hard segmentation: threshold at 0.5 before applying
    for (auto& v : mask->data) v = v >= 0.5f ? 1.0f : 0.0f;
    auto masked = apply_mask(*img, *mask);
    auto resized = resize_nearest(*masked, input_shape_[1], input_shape_[2]);
    cache_[item_id] = resized;
    return resized;
}

TensorPtr ImageStore::batch(const std::vector<std::string>& item_ids) {
    if (item_ids.empty()) throw contract_error("image batch needs at least one item");
    auto out = make_tensor({static_cast<int>(item_ids.size()), input_shape_[0], input_shape_[1],
                            input_shape_[2]});
    const size_t stride = static_cast<size_t>(input_shape_[0]) * input_shape_[1] * input_shape_[2];
    for (size_t b = 0; b < item_ids.size(); ++b) {
        auto img = image(item_ids[b]);
        std::copy(img->data.begin(), img->data.end(), out->data.begin() + b * stride);
    }
    return out;
}

}  // namespace stylesiam
