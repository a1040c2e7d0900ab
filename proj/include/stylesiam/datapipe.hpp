#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylesiam/tensor.hpp"

namespace stylesiam {

enum class Category { typeA, typeB };

const char* category_name(Category c);
Category category_from_name(const std::string& name);  // throws data_error

struct ItemRecord {
    std::string item_id;
    std::string outfit_id;
    Category category;
    std::string image_path;  // relative paths resolve against the manifest's directory
    std::string mask_path;
};

// JSONL manifest, one record per line with exactly the fields item_id,
// outfit_id, category, image_path, mask_path. Rejects duplicate item ids and
// outfits carrying more than one item per category.
std::vector<ItemRecord> load_manifest(const std::string& path);

// per-pixel product, mask [1,H,W] broadcast over the image channels
TensorPtr apply_mask(const Tensor& image, const Tensor& mask);

struct Triplet {
    std::string anchor;
    std::string positive;
    std::string negative;
};

// Seeded triplet sampling over complete outfits in the pool. Anchor category
// alternates by index (even: typeA, odd: typeB); the positive is the
// anchor's outfit-mate; the negative shares the positive's category and
// comes from a uniformly drawn different outfit.
std::vector<Triplet> build_triplets(const std::vector<ItemRecord>& records,
                                    const std::set<std::string>& outfit_pool, int count,
                                    uint32_t seed);

struct FoldSplit {
    int fold_index = 0;
    std::vector<std::string> train_outfits;
    std::vector<std::string> test_outfits;
};

// Seeded shuffle then contiguous partition; test sets are disjoint and cover
// every outfit, sized floor(N/k) or ceil(N/k). k must be >= 2.
std::vector<FoldSplit> kfold_split(std::vector<std::string> outfit_ids, int k, uint32_t seed);

// Procedural dataset: each outfit draws a style family (stripes, checkers or
// dots with a family-specific parameter band) shared by its typeA and typeB
// items, while base colors and silhouettes vary per item. The family index
// is recorded in the outfit_id ("outfitNNNN_famF"). Returns the manifest
// path.
std::string generate_synthetic(const std::string& out_dir, int n_outfits, int image_size,
                               int n_style_families, uint32_t seed);

// Decoded, masked, resized images, cached per item id.
class ImageStore {
public:
    ImageStore(std::vector<ItemRecord> records, std::array<int, 3> input_shape,
               std::string base_dir);

    const std::vector<ItemRecord>& records() const { return records_; }
    const ItemRecord& record(const std::string& item_id) const;

    TensorPtr image(const std::string& item_id);                  // [C,h,w]
    TensorPtr batch(const std::vector<std::string>& item_ids);    // [B,C,h,w]

private:
    std::vector<ItemRecord> records_;
    std::unordered_map<std::string, size_t> index_;
    std::unordered_map<std::string, TensorPtr> cache_;
    std::array<int, 3> input_shape_;
    std::string base_dir_;
};

// outfit_id -> items, complete outfits only (one item of each category)
std::map<std::string, std::array<std::string, 2>> complete_outfits(
    const std::vector<ItemRecord>& records);

}  // namespace stylesiam
