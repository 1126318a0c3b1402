"""Error taxonomy shared by the emulator, the deploy engine, and the API.

Every error that can cross the HTTP boundary carries a machine ``code`` and
an ``http_status``.  The management API only ever emits 400/401/403/404/409;
the function/instance serving surfaces (``/fn``, ``/vm``) may additionally
emit 500 for handler runtime failures, which are not management-API errors.
"""

from __future__ import annotations


class EmuError(Exception):
    """Base class for all emulator errors."""

    http_status = 400
    code = "bad_request"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# --- emucloud-core ---------------------------------------------------------

class MalformedProjectId(EmuError):
    code = "malformed_project_id"


class DuplicateProject(EmuError):
    http_status = 409
    code = "duplicate_project"


class UnknownProject(EmuError):
    http_status = 404
    code = "unknown_project"


class DuplicateAccount(EmuError):
    http_status = 409
    code = "duplicate_account"


class MalformedAccountName(EmuError):
    code = "malformed_account_name"


class BadCredentials(EmuError):
    """Unknown account or wrong key.  One error for both, so the minting
    endpoint cannot be used to enumerate accounts."""

    http_status = 401
    code = "bad_credentials"


class InvalidToken(EmuError):
    http_status = 401
    code = "invalid_token"


class MissingAudience(EmuError):
    code = "missing_audience"


class PermissionDenied(EmuError):
    http_status = 403
    code = "permission_denied"


class StaleEtag(EmuError):
    http_status = 409
    code = "stale_etag"


class UnknownRole(EmuError):
    code = "unknown_role"


# --- emucloud-services ------------------------------------------------------

class NotFound(EmuError):
    http_status = 404
    code = "not_found"


class DuplicateResource(EmuError):
    http_status = 409
    code = "duplicate_resource"


class UnknownInstance(NotFound):
    code = "unknown_instance"


class UnknownImage(NotFound):
    code = "unknown_image"


class UnknownCommit(NotFound):
    code = "unknown_commit"


class PathNotInCommit(NotFound):
    code = "path_not_in_commit"


class KeyRejected(EmuError):
    http_status = 401
    code = "key_rejected"


class UnknownSession(EmuError):
    http_status = 401
    code = "unknown_session"


class MissingHeader(EmuError):
    http_status = 403
    code = "missing_header"


class UnknownPath(NotFound):
    code = "unknown_path"


class AuthRequired(EmuError):
    http_status = 401
    code = "auth_required"


class ParseError(EmuError):
    """Handler DSL parse failure; carries the offending position."""

    code = "parse_error"

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(message)
        self.line = line
        self.column = column


class HandlerError(EmuError):
    """Handler script runtime failure.  Surfaces as a generic 500 on the
    serving path; the detailed message goes to the project log only."""

    http_status = 500
    code = "handler_error"


class LimitExceeded(HandlerError):
    code = "limit_exceeded"


# --- deploy-manager ---------------------------------------------------------

class UnknownPlaceholder(EmuError):
    code = "unknown_placeholder"

    def __init__(self, key: str):
        super().__init__(f"template references unknown key: {key}")
        self.key = key


class YamlParseError(EmuError):
    code = "yaml_parse_error"


class ValidationError(EmuError):
    code = "validation_error"


class ActiveDeploymentExists(EmuError):
    http_status = 409
    code = "active_deployment_exists"


class NotActive(EmuError):
    http_status = 409
    code = "not_active"


class DeploymentInProgress(EmuError):
    http_status = 409
    code = "deployment_in_progress"


class ResourceCreateError(EmuError):
    code = "resource_create_error"

    def __init__(self, name: str, cause: str):
        super().__init__(f"failed to create resource {name!r}: {cause}")
        self.resource_name = name
        self.cause = cause


# --- level-framework / hints -------------------------------------------------

class UnknownLevel(NotFound):
    code = "unknown_level"


class DuplicateLevel(EmuError):
    http_status = 409
    code = "duplicate_level"


class UnknownResource(EmuError):
    http_status = 404
    code = "unknown_resource"


class HelperError(EmuError):
    code = "helper_error"

    def __init__(self, step_index: int, cause: str):
        super().__init__(f"setup step {step_index} failed: {cause}")
        self.step_index = step_index
        self.cause = cause


class HintParseError(EmuError):
    code = "hint_parse_error"

    def __init__(self, index: int, reason: str):
        super().__init__(f"hint {index}: {reason}")
        self.index = index
        self.reason = reason


class AlreadyAtEnd(EmuError):
    http_status = 409
    code = "already_at_end"
