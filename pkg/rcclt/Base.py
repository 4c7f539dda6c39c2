import json

from .Exceptions import ConfigurationError


class Base:
    """
    Parent of every configuration and metadata record of rcclt (distributions,
    environment specs, Monte Carlo configs, run configs, manifests, fits).
    A record is a flat bag of attributes that can be checked against a
    schema and written to and read from JSON.

    Attributes
    ----------
    required_keys: list of str
        Attributes that must be set (not None).
    type_definitions: dict
        Attribute name to an allowed type or list of allowed types. An
        attribute missing from this table is an unknown key.
    """

    required_keys = []
    type_definitions = {}

    def validate(self):
        """
        Check the record against its schema. Raises a ConfigurationError
        naming the offending field.
        """
        cls_name = self.__class__.__name__
        for key in self.required_keys:
            if getattr(self, key, None) is None:
                raise ConfigurationError(
                    f"{cls_name} requires {key}, which is missing", field=key
                )
        for key, value in vars(self).items():
            if key not in self.type_definitions:
                raise ConfigurationError(
                    f"{key} is not a valid key for {cls_name}", field=key
                )
            if value is not None:
                self._check_type(key, value)

    def _check_type(self, key, value):
        allowed = self.type_definitions[key]
        if not isinstance(allowed, list):
            allowed = [allowed]
        if not isinstance(value, tuple(allowed)):
            names = " or ".join(t.__name__ for t in allowed)
            raise ConfigurationError(
                f"{key} of {self.__class__.__name__} must be {names}, "
                f"got {type(value).__name__}",
                field=key,
            )

    @staticmethod
    def parse_json(data=None):
        """
        Hook for subclasses to convert nested JSON values (for example a
        distribution string) before the constructor sees them.
        """
        return data

    @classmethod
    def from_json(cls, data):
        """
        Build a record from a decoded JSON object.

        Parameters
        ----------
        data : dict
            Keys must all appear in the class's type_definitions.
        """
        if not isinstance(data, dict):
            raise ConfigurationError(f"{cls.__name__} expects a JSON object")
        unknown = sorted(set(data) - set(cls.type_definitions))
        if unknown:
            raise ConfigurationError(
                f"{unknown[0]} is not a valid key for {cls.__name__}",
                field=unknown[0],
            )
        return cls(**cls.parse_json(dict(data)))

    @classmethod
    def from_file(cls, path):
        """Read a record from a JSON file."""
        with open(path) as f:
            return cls.from_json(json.load(f))

    def copy(self):
        """A deep copy, made through the JSON form."""
        return self.from_json(json.loads(self.to_json()))

    def to_dict(self):
        """
        Attributes as plain JSON values. Nested records are converted and
        unset (None) attributes are left out.
        """
        return {
            key: value.to_dict() if hasattr(value, "to_dict") else value
            for key, value in vars(self).items()
            if value is not None
        }

    def to_json(self, minify=True):
        """Canonical JSON text of the record (sorted keys)."""
        if minify:
            return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_file(self, path, minify=False):
        """
        Write the record to a JSON file.

        Parameters
        ----------
        path: str
            Destination file.
        minify: bool
            Write compact JSON. Off by default so manifests and sidecars
            stay readable.
        """
        with open(path, "w") as f:
            f.write(self.to_json(minify))
            f.write("\n")

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __str__(self):
        return str(self.to_dict())

    def __repr__(self):
        return f"{self.__class__.__name__}({self.to_json()})"
