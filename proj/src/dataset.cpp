#include "uaplab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "uaplab/errors.hpp"
#include "uaplab/hash.hpp"
#include "uaplab/png_io.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

const char* grade_name(int grade) {
    static const char* names[kNumGrades] = {"No DR", "Mild", "Moderate", "Severe",
                                            "Proliferative DR"};
    if (grade < 0 || grade >= kNumGrades) throw BadGrade("grade outside 0..4");
    return names[grade];
}

const char* role_name(DatasetRole role) {
    switch (role) {
        case DatasetRole::train: return "train";
        case DatasetRole::test: return "test";
        case DatasetRole::perturb_split: return "perturb_split";
        case DatasetRole::robust_split: return "robust_split";
    }
    return "train";
}

std::vector<int> LabeledDataset::grades() const {
    std::vector<int> g;
    g.reserve(items.size());
    for (const auto& item : items) g.push_back(item.grade);
    return g;
}

std::vector<std::int64_t> LabeledDataset::class_counts(int num_classes) const {
    std::vector<std::int64_t> counts(num_classes, 0);
    for (const auto& item : items) {
        if (item.grade < 0 || item.grade >= num_classes)
            throw BadGrade("dataset grade outside [0, K)");
        counts[item.grade]++;
    }
    return counts;
}

LabeledDataset load_dataset_csv(const std::string& csv_path, const std::string& image_dir) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open " + csv_path);

    std::string line;
    if (!std::getline(in, line)) throw MalformedCsv("empty CSV: " + csv_path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id_code,diagnosis")
        throw MalformedCsv("expected header 'id_code,diagnosis', got '" + line + "'");

    LabeledDataset dataset;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw MalformedCsv("line " + std::to_string(line_no) + ": expected 2 fields");
        std::string id = line.substr(0, comma);
        std::string grade_str = line.substr(comma + 1);
        if (id.empty() || grade_str.empty())
            throw MalformedCsv("line " + std::to_string(line_no) + ": empty field");

        int grade = 0;
        try {
            std::size_t used = 0;
            grade = std::stoi(grade_str, &used);
            if (used != grade_str.size()) throw std::invalid_argument("trailing chars");
        } catch (const std::exception&) {
            throw MalformedCsv("line " + std::to_string(line_no) + ": bad diagnosis '" +
                               grade_str + "'");
        }
        if (grade < 0 || grade >= kNumGrades)
            throw BadGrade("id " + id + ": grade " + std::to_string(grade) +
                           " outside 0..4");

        std::filesystem::path img_path = std::filesystem::path(image_dir) / (id + ".png");
        if (!std::filesystem::exists(img_path))
            throw MissingImage("no image for id " + id + " (" + img_path.string() + ")");

        DatasetItem item;
        item.id = id;
        item.grade = grade;
        item.image = read_png(img_path.string());
        dataset.items.push_back(std::move(item));
    }

    std::sort(dataset.items.begin(), dataset.items.end(),
              [](const DatasetItem& a, const DatasetItem& b) { return a.id < b.id; });
    return dataset;
}

namespace {

std::vector<int> class_quotas(int n, const std::array<double, kNumGrades>& proportions) {
    double sum = 0.0;
    for (double p : proportions) {
        if (p < 0.0) throw BadProportions("negative class proportion");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
        throw BadProportions("proportions sum to " + std::to_string(sum) + ", expected 1");

    std::vector<int> counts(kNumGrades);
    std::vector<std::pair<double, int>> remainders; // (-fraction, class) for stable sort
    int assigned = 0;
    for (int g = 0; g < kNumGrades; ++g) {
        double exact = n * proportions[g];
        counts[g] = static_cast<int>(std::floor(exact));
        assigned += counts[g];
        remainders.push_back({-(exact - counts[g]), g});
    }
    std::sort(remainders.begin(), remainders.end());
    for (int i = 0; i < n - assigned; ++i) counts[remainders[i % kNumGrades].second]++;
    return counts;
}

void render_disc_background(ImageTensor& img, Rng& rng, double radius) {
    double cy = img.height / 2.0, cx = img.width / 2.0;
    double brightness = rng.uniform(0.95, 1.05);
    const double base[3] = {0.58, 0.30, 0.14};
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double dy = (y + 0.5) - cy, dx = (x + 0.5) - cx;
            double d = std::sqrt(dy * dy + dx * dx);
            if (d > radius) continue;
            double shade = (1.0 - 0.35 * (d / radius) * (d / radius)) * brightness;
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = base[c] * shade;
        }
    }
}

void render_vessels(ImageTensor& img, Rng& rng, double radius) {
    double cy = img.height / 2.0, cx = img.width / 2.0;
    int n_vessels = 2;
    std::vector<char> drawn(static_cast<std::size_t>(img.height) * img.width);
    for (int v = 0; v < n_vessels; ++v) {
        std::fill(drawn.begin(), drawn.end(), 0);
        double a0 = rng.uniform(0.0, 6.283185307179586);
        double a1 = a0 + rng.uniform(2.0, 4.3);
        double r0 = 0.9 * radius, r1 = 0.9 * radius;
        double p0y = cy + r0 * std::sin(a0), p0x = cx + r0 * std::cos(a0);
        double p1y = cy + r1 * std::sin(a1), p1x = cx + r1 * std::cos(a1);
        double my = (p0y + p1y) / 2 + rng.uniform(-0.3, 0.3) * radius;
        double mx = (p0x + p1x) / 2 + rng.uniform(-0.3, 0.3) * radius;
        int steps = 4 * std::max(img.height, img.width);
        for (int s = 0; s <= steps; ++s) {
            double t = static_cast<double>(s) / steps;
            double u = 1.0 - t;
            double py = u * u * p0y + 2 * u * t * my + t * t * p1y;
            double px = u * u * p0x + 2 * u * t * mx + t * t * p1x;
            int yi = static_cast<int>(std::lround(py)), xi = static_cast<int>(std::lround(px));
            if (yi < 0 || yi >= img.height || xi < 0 || xi >= img.width) continue;
            std::size_t flat = static_cast<std::size_t>(yi) * img.width + xi;
            if (drawn[flat]) continue;
            drawn[flat] = 1;
            for (int c = 0; c < 3; ++c) img.at(c, yi, xi) *= 0.55;
        }
    }
}

void render_lesions(ImageTensor& img, Rng& rng, double radius, int grade) {
    double cy = img.height / 2.0, cx = img.width / 2.0;
    double scale = std::min(img.height, img.width);
    std::vector<std::pair<double, double>> centers;
    for (int b = 0; b < grade; ++b) {
        double by = cy, bx = cx;
        // rejection sampling keeps the blobs disjoint so the count is legible
        for (int attempt = 0; attempt < 60; ++attempt) {
            double angle = rng.uniform(0.0, 6.283185307179586);
            double dist = rng.uniform(0.1, 0.72) * radius;
            by = cy + dist * std::sin(angle);
            bx = cx + dist * std::cos(angle);
            bool clear = true;
            for (const auto& [oy, ox] : centers)
                if (std::hypot(by - oy, bx - ox) < 0.30 * scale) clear = false;
            if (clear) break;
        }
        centers.push_back({by, bx});
        double brad = rng.uniform(0.09, 0.125) * scale;
        double amp = rng.uniform(0.42, 0.55);
        int y0 = std::max(0, static_cast<int>(by - brad - 1));
        int y1 = std::min(img.height - 1, static_cast<int>(by + brad + 1));
        int x0 = std::max(0, static_cast<int>(bx - brad - 1));
        int x1 = std::min(img.width - 1, static_cast<int>(bx + brad + 1));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                double dy = (y + 0.5) - by, dx = (x + 0.5) - bx;
                double q = (dy * dy + dx * dx) / (brad * brad);
                if (q >= 1.0) continue;
                double bump = amp * (1.0 - q);
                img.at(0, y, x) += bump;         // bright yellow-white
                img.at(1, y, x) += bump * 0.9;
                img.at(2, y, x) += bump * 0.35;
            }
        }
    }
}

ImageTensor render_synthetic(int grade, int image_size, std::uint64_t item_seed) {
    Rng rng(item_seed);
    ImageTensor img(3, image_size, image_size);
    double radius = 0.52 * image_size; // slightly past the edge so no border is all-black
    render_disc_background(img, rng, radius);
    render_vessels(img, rng, radius);
    render_lesions(img, rng, radius, grade);
    for (double& p : img.pixels) p += rng.gaussian() * 0.008;
    clip01_inplace(img);
    return img;
}

} // namespace

LabeledDataset generate_synthetic_dataset(int n,
                                          const std::array<double, kNumGrades>& proportions,
                                          int image_size, std::uint64_t seed) {
    if (n < kNumGrades) throw BadProportions("need n >= 5 to cover all grades");
    if (image_size < 8) throw Error("image_size too small");

    std::vector<int> counts = class_quotas(n, proportions);
    std::vector<int> labels;
    labels.reserve(n);
    for (int g = 0; g < kNumGrades; ++g)
        labels.insert(labels.end(), counts[g], g);

    Rng order_rng(seed);
    order_rng.shuffle(labels);

    LabeledDataset dataset;
    dataset.items.reserve(n);
    for (int i = 0; i < n; ++i) {
        DatasetItem item;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "syn%06d", i);
        item.id = buf;
        item.grade = labels[i];
        item.image = render_synthetic(labels[i], image_size, Rng::derive(seed, i));
        dataset.items.push_back(std::move(item));
    }
    return dataset;
}

namespace {

// class -> shuffled item indices, iterating classes in ascending grade order
std::map<int, std::vector<std::size_t>> shuffled_class_indices(const LabeledDataset& dataset,
                                                               Rng& rng) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.items.size(); ++i)
        by_class[dataset.items[i].grade].push_back(i);
    for (auto& [grade, indices] : by_class) rng.shuffle(indices);
    return by_class;
}

} // namespace

FoldAssignment stratified_kfold(const LabeledDataset& dataset, int k, std::uint64_t seed) {
    if (dataset.empty()) throw EmptyDataset("stratified_kfold: empty dataset");
    if (k < 2) throw Error("stratified_kfold: k must be >= 2");

    Rng rng(seed);
    auto by_class = shuffled_class_indices(dataset, rng);
    for (const auto& [grade, indices] : by_class)
        if (indices.size() < static_cast<std::size_t>(k))
            throw ClassTooSmall("class " + std::to_string(grade) + " has " +
                                std::to_string(indices.size()) + " members, need >= " +
                                std::to_string(k));

    FoldAssignment assignment;
    assignment.k = k;
    assignment.fold_of.assign(dataset.items.size(), -1);
    for (const auto& [grade, indices] : by_class)
        for (std::size_t pos = 0; pos < indices.size(); ++pos)
            assignment.fold_of[indices[pos]] = static_cast<int>(pos % k);
    return assignment;
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& dataset,
                                                           double fraction,
                                                           std::uint64_t seed,
                                                           DatasetRole first_role,
                                                           DatasetRole second_role) {
    if (dataset.empty()) throw EmptyDataset("stratified_split: empty dataset");
    if (!(fraction > 0.0 && fraction < 1.0))
        throw Error("stratified_split: fraction must be in (0,1)");

    Rng rng(seed);
    auto by_class = shuffled_class_indices(dataset, rng);
    for (const auto& [grade, indices] : by_class)
        if (indices.size() < 2)
            throw ClassTooSmall("class " + std::to_string(grade) +
                                " has fewer than 2 members");

    // per-class floor quota, then largest remainders until the global target
    int target = static_cast<int>(std::lround(fraction * dataset.size()));
    std::vector<std::pair<double, int>> remainders;
    std::map<int, std::size_t> take;
    int assigned = 0;
    for (const auto& [grade, indices] : by_class) {
        double exact = fraction * indices.size();
        std::size_t base = static_cast<std::size_t>(std::floor(exact));
        take[grade] = base;
        assigned += static_cast<int>(base);
        remainders.push_back({-(exact - base), grade});
    }
    std::sort(remainders.begin(), remainders.end());
    for (int i = 0; i < target - assigned && i < static_cast<int>(remainders.size()); ++i)
        take[remainders[i].second]++;

    std::vector<char> in_first(dataset.size(), 0);
    for (const auto& [grade, indices] : by_class)
        for (std::size_t pos = 0; pos < take[grade] && pos < indices.size(); ++pos)
            in_first[indices[pos]] = 1;

    LabeledDataset first, second;
    first.role = first_role;
    second.role = second_role;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        (in_first[i] ? first : second).items.push_back(dataset.items[i]);
    return {std::move(first), std::move(second)};
}

std::pair<LabeledDataset, LabeledDataset> split_perturb_robust(const LabeledDataset& train,
                                                               double fraction_p,
                                                               std::uint64_t seed) {
    return stratified_split(train, fraction_p, seed, DatasetRole::perturb_split,
                            DatasetRole::robust_split);
}

std::string dataset_digest(const LabeledDataset& dataset) {
    Sha256 hash;
    auto update_u32 = [&hash](std::uint32_t v) {
        unsigned char le[4] = {static_cast<unsigned char>(v),
                               static_cast<unsigned char>(v >> 8),
                               static_cast<unsigned char>(v >> 16),
                               static_cast<unsigned char>(v >> 24)};
        hash.update(le, 4);
    };
    update_u32(static_cast<std::uint32_t>(dataset.items.size()));
    for (const auto& item : dataset.items) {
        hash.update(item.id);
        update_u32(static_cast<std::uint32_t>(item.grade));
        update_u32(static_cast<std::uint32_t>(item.image.channels));
        update_u32(static_cast<std::uint32_t>(item.image.height));
        update_u32(static_cast<std::uint32_t>(item.image.width));
        hash.update(item.image.pixels.data(), item.image.pixels.size() * sizeof(double));
    }
    return hash.hex_digest();
}

} // namespace uaplab
