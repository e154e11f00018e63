// Copyright 2026 The pprt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

/// Additive homomorphic stream cipher over Z/2^b plus the public-key
/// envelopes used on the wire.
namespace pprt::hcrypt {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class HcryptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A power-of-two modulus M = 2^bits, 1 <= bits <= 64.
class Modulus {
 public:
  static constexpr Modulus pow2(unsigned bits) {
    if (bits == 0 || bits > 64) throw HcryptError("modulus bits must be in [1, 64]");
    return Modulus(bits);
  }

  constexpr unsigned bits() const { return bits_; }
  /// M - 1
  constexpr std::uint64_t mask() const {
    return bits_ == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits_) - 1;
  }
  /// M / 2
  constexpr std::uint64_t half() const { return std::uint64_t{1} << (bits_ - 1); }

  constexpr bool operator==(const Modulus&) const = default;

 private:
  constexpr explicit Modulus(unsigned bits) : bits_(bits) {}
  unsigned bits_;
};

inline constexpr Modulus kWordModulus = Modulus::pow2(64);

struct Keystream {
  std::uint64_t value = 0;
  constexpr bool operator==(const Keystream&) const = default;
};

struct Ciphertext {
  std::uint64_t value = 0;
  Modulus modulus = kWordModulus;
  constexpr bool operator==(const Ciphertext&) const = default;
};

/// c = (m + k) mod M, with m embedded as its two's-complement residue.
/// Throws HcryptError when |m| >= M/2 or k >= M.
Ciphertext enc(std::int64_t m, Keystream k, Modulus modulus = kWordModulus);

/// Signed decoding of (c - k) mod M into [-M/2, M/2).
std::int64_t dec(Ciphertext c, Keystream k);

/// Homomorphic addition. Throws on modulus mismatch.
Ciphertext add_ct(Ciphertext a, Ciphertext b);

inline Ciphertext operator+(Ciphertext a, Ciphertext b) { return add_ct(a, b); }

/// (k1 + k2) mod M; the key that decrypts add_ct of the two ciphertexts.
Keystream add_keys(Keystream a, Keystream b, Modulus modulus = kWordModulus);

template <std::size_t N>
struct SecretBytes {
  std::array<std::uint8_t, N> bytes{};
  bool operator==(const SecretBytes&) const = default;
};

/// The retargeter's symmetric key K. Never serialized into a wire message.
struct MasterSecret : SecretBytes<32> {
  static MasterSecret random();
};

/// Per (client, retargeter, ad request) symmetric key.
struct SessionKey : SecretBytes<32> {
  static SessionKey random();
};

struct PublicKey : SecretBytes<32> {};
struct PrivateKey : SecretBytes<32> {};

struct KeyPair {
  PublicKey public_key;
  PrivateKey private_key;

  static KeyPair generate();
  /// Deterministic key pair from a 32-byte seed (simulation use).
  static KeyPair from_seed(std::span<const std::uint8_t, 32> seed);
};

enum class LabelKind : std::uint8_t {
  kFactor = 0x01,
  kPis = 0x02,
  kBidKey = 0x03,
  kCoeff = 0x04,
};

/// Identifies one keystream slot of one product.
struct DerivationLabel {
  std::string product_id;
  LabelKind kind = LabelKind::kPis;
  std::vector<std::uint32_t> indices;

  static DerivationLabel pis(std::string_view product_id);
  static DerivationLabel bid_key(std::string_view product_id);
  static DerivationLabel factor(std::string_view product_id, std::uint32_t attribute,
                                std::uint32_t value);
  static DerivationLabel coeff(std::string_view product_id, std::uint32_t attr_i,
                               std::uint32_t attr_j, std::uint32_t value_a,
                               std::uint32_t value_b);
};

/// Canonical byte encoding hashed by derive_keystream:
///   id_P | 0x1F | K | 0x1F | kind | big-endian u32 indices
/// Throws HcryptError on a malformed label.
Bytes encode_label(const MasterSecret& master, const DerivationLabel& label);

/// First 8 bytes (big-endian) of SHA-256 over encode_label(master, label).
Keystream derive_keystream(const MasterSecret& master, const DerivationLabel& label);

/// Anonymous-sender sealed box: X25519 with an ephemeral key, then
/// ChaCha20-Poly1305. Layout: ephemeral_pk(32) | ciphertext(32) | tag(16).
Bytes seal_session_key(const SessionKey& key, const PublicKey& recipient);
std::optional<SessionKey> open_session_key(ByteView blob, const KeyPair& recipient);

inline constexpr std::size_t kSealedSessionKeySize = 32 + 32 + 16;

/// Associated-data strings bound into every AEAD blob.
namespace context {
inline constexpr std::string_view kProductPayload = "product-payload";
inline constexpr std::string_view kAdContent = "ad-content";
inline constexpr std::string_view kRankingRequest = "ranking-request";
inline constexpr std::string_view kRankingResponse = "ranking-response";
inline constexpr std::string_view kStatsContribution = "stats-contribution";
}  // namespace context

/// ChaCha20-Poly1305 (IETF) with a random 96-bit nonce prefixed to the
/// output. Layout: nonce(12) | ciphertext | tag(16).
Bytes aead_seal(ByteView payload, const SessionKey& key, std::string_view context);
std::optional<Bytes> aead_open(ByteView blob, const SessionKey& key, std::string_view context);

inline constexpr std::size_t kAeadOverhead = 12 + 16;

/// 8-byte big-endian encoding of a ciphertext residue.
std::array<std::uint8_t, 8> to_be_bytes(std::uint64_t v);
std::uint64_t from_be_bytes(ByteView bytes);

std::string base64_encode(ByteView bytes);
/// Throws HcryptError on invalid input.
Bytes base64_decode(std::string_view text);

std::string ciphertext_to_base64(Ciphertext c);
/// Throws HcryptError unless the text decodes to exactly 8 bytes.
Ciphertext ciphertext_from_base64(std::string_view text);

void random_bytes(std::span<std::uint8_t> out);

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}
inline std::string to_string(ByteView b) { return {b.begin(), b.end()}; }

}  // namespace pprt::hcrypt
