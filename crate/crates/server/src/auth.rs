//! Static bearer-token principals loaded from a seed file.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use tutorgen_core::Digest;

use crate::error::ApiError;
use crate::service::AppState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Principal {
    /// Stable identifier derived from the token; safe to log and store.
    pub id: String,
    pub role: Role,
    pub display_name: String,
}

impl fmt::Debug for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Principal")
            .field("id", &self.id)
            .field("role", &self.role)
            .field("display_name", &self.display_name)
            .finish()
    }
}

impl Principal {
    pub fn require(&self, role: Role) -> Result<(), ApiError> {
        if self.role == role {
            Ok(())
        } else {
            Err(ApiError::forbidden(&role.to_string()))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalSeed {
    pub token: String,
    pub role: Role,
    pub display_name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedFile {
    #[serde(default, rename = "principal")]
    principals: Vec<PrincipalSeed>,
}

/// Tokens must carry at least 128 bits; 32 hex characters.
pub const MIN_TOKEN_HEX_LEN: usize = 32;

/// 256-bit random token, hex encoded.
pub fn generate_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[derive(Clone, Default)]
pub struct Principals {
    by_token: Arc<HashMap<String, Principal>>,
}

impl fmt::Debug for Principals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Principals")
            .field("count", &self.by_token.len())
            .finish()
    }
}

impl Principals {
    pub fn new(seeds: impl IntoIterator<Item = PrincipalSeed>) -> anyhow::Result<Self> {
        let mut by_token = HashMap::new();
        for seed in seeds {
            if seed.token.len() < MIN_TOKEN_HEX_LEN {
                anyhow::bail!(
                    "token for '{}' is shorter than {MIN_TOKEN_HEX_LEN} characters",
                    seed.display_name
                );
            }
            let principal = Principal {
                id: format!("pr-{}", Digest::of(&seed.token).prefix(16)),
                role: seed.role,
                display_name: seed.display_name,
            };
            if by_token.insert(seed.token, principal).is_some() {
                anyhow::bail!("duplicate token in principals file");
            }
        }
        Ok(Self {
            by_token: Arc::new(by_token),
        })
    }

    /// Reads a TOML file of `[[principal]]` tables.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        let file: SeedFile = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))?;
        Self::new(file.principals)
    }

    pub fn to_toml(seeds: &[PrincipalSeed]) -> String {
        toml::to_string(&SeedFile {
            principals: seeds.to_vec(),
        })
        .expect("seed file serializes")
    }

    pub fn authenticate(&self, token: &str) -> Option<&Principal> {
        self.by_token.get(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Principal> {
        self.by_token.values()
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }
}

/// Extractor for the authenticated caller.
pub struct Auth(pub Principal);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(ApiError::unauthorized)?;
        let token = header
            .strip_prefix("Bearer ")
            .ok_or_else(ApiError::unauthorized)?
            .trim();
        state
            .principals()
            .authenticate(token)
            .cloned()
            .map(Auth)
            .ok_or_else(ApiError::unauthorized)
    }
}
