#include "densecount/errors.hpp"

namespace densecount {

const char* to_string(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::kBadMagic: return "bad magic";
    case FormatErrorCode::kUnsupportedVersion: return "unsupported version";
    case FormatErrorCode::kTruncatedHeader: return "truncated header";
    case FormatErrorCode::kBadHeader: return "bad header";
    case FormatErrorCode::kPayloadLength: return "payload length";
    case FormatErrorCode::kSpecMismatch: return "spec/payload mismatch";
    case FormatErrorCode::kIo: return "i/o error";
  }
  return "format error";
}

}  // namespace densecount
