#pragma once

#include <span>
#include <string>
#include <vector>

#include "recon/codec.hpp"
#include "recon/types.hpp"

namespace recon {

/// Float properties written per vertex, in file order.
const std::vector<std::string>& ply_property_names();

/// Parses a binary little-endian 3DGS PLY. Scales are stored as logs and
/// opacity as a logit; quaternions are normalized on read. Extra scalar
/// properties (normals, say) are skipped. Throws FormatError with a byte
/// offset on a missing property, unsupported layout or truncated body.
std::vector<GaussianRecord> read_gaussian_ply(std::span<const std::uint8_t> bytes);

/// Inverse mapping. Opacities are clamped to [1e-6, 1 - 1e-6] before the
/// logit. Output bytes depend only on the records.
Bytes write_gaussian_ply(std::span<const GaussianRecord> records);

std::vector<GaussianRecord> load_gaussian_ply(const std::string& path);
void save_gaussian_ply(const std::string& path, std::span<const GaussianRecord> records);

}  // namespace recon
