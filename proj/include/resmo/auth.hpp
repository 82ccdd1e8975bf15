#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>

namespace resmo {

/// PBKDF2-HMAC-SHA256 of `secret` with `salt`, hex encoded.
std::string hash_secret(const std::string& secret, const std::string& salt_hex, int iterations);

/// `n` random bytes from the OpenSSL generator, hex encoded.
std::string random_hex(std::size_t n);

struct Credential
{
    std::string salt_hex;
    int iterations = 0;
    std::string hash_hex;
};

/// One `user:salt:iterations:hash` line with a fresh salt.
std::string make_credential_line(const std::string& user, const std::string& secret, int iterations = 100000);

/// Parses credential lines; `#` comments and blank lines are skipped.
/// Throws DecodeError with the line number.
std::map<std::string, Credential> parse_credentials(const std::string& text);
std::map<std::string, Credential> load_credentials(const std::filesystem::path& path);

class Authenticator
{
public:
    using Clock = std::chrono::steady_clock;

    Authenticator(std::map<std::string, Credential> users, std::chrono::seconds ttl,
                  std::function<Clock::time_point()> now = Clock::now);

    /// Issues an opaque token. Unknown users cost the same hashing work as
    /// known ones. Throws AuthError.
    std::string login(const std::string& user, const std::string& secret);
    /// Returns the user owning a live token; throws AuthError otherwise.
    std::string check(const std::string& token);
    void revoke(const std::string& token);

    std::chrono::seconds ttl() const noexcept { return ttl_; }

private:
    struct Grant
    {
        std::string user;
        Clock::time_point expires;
    };

    std::map<std::string, Credential> users_;
    std::chrono::seconds ttl_;
    std::function<Clock::time_point()> now_;
    std::mutex mutex_;
    std::map<std::string, Grant> tokens_;
    Credential dummy_;
};

} // namespace resmo
