#ifndef HABIT_DATASET_IO_HPP
#define HABIT_DATASET_IO_HPP

// JSON Lines persistence for triplets (`id, ref, mod, target_id, noise_label`)
// and gallery entries (`id, vec`).

#include <filesystem>
#include <string>
#include <vector>

#include "habit/synth.hpp"

namespace habit {

inline constexpr const char* kTripletsFile = "triplets.jsonl";
inline constexpr const char* kGalleryFile = "gallery.jsonl";

std::string triplets_to_jsonl(const std::vector<TripletRecord>& records);
std::string gallery_to_jsonl(const std::vector<GalleryEntry>& gallery);

std::vector<TripletRecord> triplets_from_jsonl(const std::string& text);
std::vector<GalleryEntry> gallery_from_jsonl(const std::string& text);

void write_dataset(const std::filesystem::path& dir, const Dataset& data);
/// Reads triplets and gallery; latent attributes are not restored.
Dataset read_dataset(const std::filesystem::path& dir);

/// Whole-file helpers raising IoError.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace habit

#endif  // HABIT_DATASET_IO_HPP
