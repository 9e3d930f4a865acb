#pragma once

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <string>
#include <vector>

#include "mahaflow/common.hpp"

namespace mahaflow::uni {

// UTF-8 <-> codepoint helpers plus thin ICU wrappers. All text enters the
// system as UTF-8 and is processed as codepoint sequences.

inline std::vector<uint32_t> utf8_decode(const std::string& s) {
  std::vector<uint32_t> out;
  out.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    uint32_t cp = 0;
    int extra = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1f;
      extra = 1;
    } else if ((c >> 4) == 0xe) {
      cp = c & 0x0f;
      extra = 2;
    } else if ((c >> 3) == 0x1e) {
      cp = c & 0x07;
      extra = 3;
    } else {
      cp = 0xFFFD;  // invalid lead byte
    }
    ++i;
    for (int k = 0; k < extra; ++k) {
      if (i < s.size() && (static_cast<unsigned char>(s[i]) >> 6) == 0x2) {
        cp = (cp << 6) | (static_cast<unsigned char>(s[i]) & 0x3f);
        ++i;
      } else {
        cp = 0xFFFD;
        break;
      }
    }
    out.push_back(cp);
  }
  return out;
}

inline void utf8_append(std::string& s, uint32_t cp) {
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    s.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    s.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

inline std::string utf8_encode(const std::vector<uint32_t>& cps) {
  std::string s;
  s.reserve(cps.size());
  for (uint32_t cp : cps) utf8_append(s, cp);
  return s;
}

inline std::string nfc(const std::string& s) {
  UErrorCode ec = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(ec);
  require(U_SUCCESS(ec), Err::provider_failure, "ICU NFC unavailable");
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(s);
  icu::UnicodeString n = norm->normalize(u, ec);
  require(U_SUCCESS(ec), Err::provider_failure, "ICU NFC failed");
  std::string out;
  n.toUTF8String(out);
  return out;
}

inline bool is_punct(uint32_t cp) { return u_ispunct(static_cast<UChar32>(cp)); }

inline uint32_t to_lower(uint32_t cp) {
  return static_cast<uint32_t>(u_tolower(static_cast<UChar32>(cp)));
}

inline bool is_space(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' ||
         u_isUWhiteSpace(static_cast<UChar32>(cp));
}

}  // namespace mahaflow::uni
