from rest_framework import serializers

from baselines.methods import BASELINE_METHODS, MethodConfig


class MethodConfigSerializer(serializers.Serializer):
    method = serializers.ChoiceField(choices=BASELINE_METHODS)
    eta = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    M = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    H = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    R = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    lambda1 = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    sigma = serializers.FloatField(required=False, allow_null=True, min_value=0.0, max_value=1.0)

    def validate_sigma(self, value):
        if value is not None and not 0.0 < value < 1.0:
            raise serializers.ValidationError('sigma must lie strictly between 0 and 1')
        return value

    def validate(self, attrs):
        method = attrs['method']
        for name in ('eta', 'M', 'H', 'R', 'lambda1'):
            if attrs.get(name) == 0.0:
                raise serializers.ValidationError({name: 'must be positive'})
        if method in ('GD', 'AGD') and attrs.get('eta') is None:
            raise serializers.ValidationError({'eta': f'{method} needs a step size'})
        if method in ('CR', 'ACR', 'SONG') and attrs.get('M') is None and attrs.get('H') is None:
            raise serializers.ValidationError({'H': f'{method} needs M or H'})
        return attrs

    def create(self, validated_data):
        return MethodConfig(**validated_data)
